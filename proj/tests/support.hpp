#pragma once

// Shared fixtures: small synthetic lists, brute-force oracles and a
// recording listwise backend.

#include <algorithm>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "pivotrank/rerankers.hpp"
#include "pivotrank/rng.hpp"
#include "pivotrank/schedulers.hpp"
#include "pivotrank/synth.hpp"
#include "pivotrank/types.hpp"

namespace testsupport {

using namespace pivotrank;

inline std::string doc_name(std::size_t i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "d%03zu", i);
    return buf;
}

/// Query `qid` with docs d000.. in rank order, grades as given.
struct GradedList {
    Query query;
    RankedList list;
    Qrels qrels;
    Run run;
    std::vector<Document> docs;
};

inline GradedList graded_list(const std::vector<int>& grades, std::string qid = "q1")
{
    GradedList g;
    g.query = {qid, "alpha beta"};
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < grades.size(); ++i) {
        ids.push_back(doc_name(i));
        g.qrels.add(qid, ids.back(), RelevanceGrade(grades[i]));
        g.docs.push_back({ids.back(), "text of " + ids.back()});
    }
    g.list = RankedList::from_order(qid, ids);
    g.run.emplace(qid, g.list);
    return g;
}

/// Brute force: stable sort of the whole list by grade, descending.
inline std::vector<std::string> oracle_sorted(const GradedList& g)
{
    auto ids = g.list.ids();
    std::stable_sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
        return g.qrels.grade(g.query.id, a) > g.qrels.grade(g.query.id, b);
    });
    return ids;
}

/// Listwise backend with a fixed per-doc preference and a log of windows.
/// Ids missing from `key` (such as the pivot) use `pivot_key`.
class KeyedListwise final : public ListwiseBackend {
   public:
    std::map<std::string, double> key;  // higher first
    double pivot_key = 0.0;

    std::vector<std::size_t> rank(const Query&, std::span<const Document> window) const override
    {
        std::vector<std::size_t> order(window.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        auto k = [&](std::size_t i) {
            auto it = key.find(window[i].id);
            return it == key.end() ? pivot_key : it->second;
        };
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return k(a) > k(b); });
        std::lock_guard lock(mu_);
        sizes_.push_back(window.size());
        return order;
    }

    std::vector<std::size_t> window_sizes() const
    {
        std::lock_guard lock(mu_);
        return sizes_;
    }

   private:
    mutable std::mutex mu_;
    mutable std::vector<std::size_t> sizes_;
};

inline bool is_permutation_of(const RankedList& out, const RankedList& in)
{
    auto a = out.ids();
    auto b = in.ids();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

}  // namespace testsupport
