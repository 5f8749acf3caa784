#include "pivotrank/types.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace pivotrank {

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
      line_(line)
{}

RelevanceGrade::RelevanceGrade(int value) : value_(value)
{
    if (value < kMin || value > kMax) {
        throw InvariantError("relevance grade out of range [0,3]: " + std::to_string(value));
    }
}

RankedList::RankedList(std::string query_id, std::vector<ScoredDoc> entries)
    : query_id_(std::move(query_id)), entries_(std::move(entries))
{
    std::unordered_set<std::string_view> seen;
    seen.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (!std::isfinite(e.score)) {
            throw InvariantError("non-finite score for " + e.doc_id);
        }
        if (i > 0 && entries_[i - 1].score < e.score) {
            throw InvariantError("ranked list for " + query_id_ + " not sorted at position "
                                 + std::to_string(i + 1));
        }
        if (!seen.insert(e.doc_id).second) {
            throw InvariantError("duplicate doc id " + e.doc_id + " in list " + query_id_);
        }
    }
}

RankedList RankedList::sorted(std::string query_id, std::vector<ScoredDoc> entries)
{
    std::sort(entries.begin(), entries.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.doc_id < b.doc_id;
    });
    return RankedList(std::move(query_id), std::move(entries));
}

RankedList RankedList::from_order(std::string query_id, std::span<const std::string> ids)
{
    std::vector<ScoredDoc> entries;
    entries.reserve(ids.size());
    const auto n = static_cast<double>(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        entries.push_back({ids[i], n - static_cast<double>(i), {}, {}});
    }
    return RankedList(std::move(query_id), std::move(entries));
}

std::vector<std::string> RankedList::ids() const
{
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        out.push_back(e.doc_id);
    }
    return out;
}

void Qrels::add(const std::string& query_id, const std::string& doc_id, RelevanceGrade grade)
{
    auto& q = grades_[query_id];
    auto [it, inserted] = q.emplace(doc_id, grade);
    if (!inserted && it->second != grade) {
        throw InvariantError("conflicting grades for (" + query_id + ", " + doc_id + ")");
    }
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const
{
    auto q = grades_.find(query_id);
    if (q == grades_.end()) {
        return 0;
    }
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second.value();
}

bool Qrels::judged(const std::string& query_id, const std::string& doc_id) const
{
    auto q = grades_.find(query_id);
    return q != grades_.end() && q->second.contains(doc_id);
}

bool Qrels::has_query(const std::string& query_id) const
{
    auto q = grades_.find(query_id);
    return q != grades_.end() && !q->second.empty();
}

const std::map<std::string, RelevanceGrade>& Qrels::for_query(const std::string& query_id) const
{
    static const std::map<std::string, RelevanceGrade> empty;
    auto q = grades_.find(query_id);
    return q == grades_.end() ? empty : q->second;
}

std::size_t Qrels::size() const noexcept
{
    std::size_t n = 0;
    for (const auto& [_, q] : grades_) {
        n += q.size();
    }
    return n;
}

DocumentStore::DocumentStore(std::span<const Document> docs)
{
    for (const auto& d : docs) {
        texts_[d.id] = d.text;
    }
}

void DocumentStore::add(Document doc) { texts_[doc.id] = std::move(doc.text); }

Document DocumentStore::get(const std::string& id) const
{
    auto it = texts_.find(id);
    return {id, it == texts_.end() ? std::string{} : it->second};
}

}  // namespace pivotrank
