#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pivotrank {

/// Raised for malformed input files. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
   public:
    ParseError(const std::string& what, std::size_t line = 0);
    std::size_t line() const noexcept { return line_; }

   private:
    std::size_t line_;
};

/// Violation of a domain invariant (unsorted list, grade out of range, ...).
class InvariantError : public std::logic_error {
    using std::logic_error::logic_error;
};

/// Graded relevance on the four-level TREC scale.
class RelevanceGrade {
   public:
    static constexpr int kMin = 0;
    static constexpr int kMax = 3;

    RelevanceGrade() = default;
    explicit RelevanceGrade(int value);

    int value() const noexcept { return value_; }
    bool relevant(int threshold = 2) const noexcept { return value_ >= threshold; }

    friend bool operator==(RelevanceGrade, RelevanceGrade) = default;
    friend auto operator<=>(RelevanceGrade, RelevanceGrade) = default;

   private:
    int value_ = 0;
};

struct Query {
    std::string id;
    std::string text;
};

struct Document {
    std::string id;
    std::string text;
};

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
    // Diagnostics only; never part of equality.
    std::optional<int> source_rank;
    std::optional<double> model_score;

    friend bool operator==(const ScoredDoc& a, const ScoredDoc& b)
    {
        return a.doc_id == b.doc_id && a.score == b.score;
    }
};

/// Ordered unique document ids with non-increasing finite scores.
///
/// The ordering invariant is checked on every construction. Use
/// `RankedList::sorted` to build from unordered input (score desc, doc id asc).
class RankedList {
   public:
    RankedList() = default;
    RankedList(std::string query_id, std::vector<ScoredDoc> entries);

    static RankedList sorted(std::string query_id, std::vector<ScoredDoc> entries);

    /// Build from an ordering; scores become synthetic descending ranks n, n-1, ..., 1.
    static RankedList from_order(std::string query_id, std::span<const std::string> ids);

    const std::string& query_id() const noexcept { return query_id_; }
    const std::vector<ScoredDoc>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const ScoredDoc& operator[](std::size_t i) const { return entries_[i]; }

    std::vector<std::string> ids() const;

    friend bool operator==(const RankedList&, const RankedList&) = default;

   private:
    std::string query_id_;
    std::vector<ScoredDoc> entries_;
};

using Run = std::map<std::string, RankedList>;

/// Graded judgments keyed by (query id, doc id).
class Qrels {
   public:
    /// Throws InvariantError when the key already has a different grade.
    void add(const std::string& query_id, const std::string& doc_id, RelevanceGrade grade);

    /// Grade of a judged pair, 0 when unjudged.
    int grade(const std::string& query_id, const std::string& doc_id) const;
    bool judged(const std::string& query_id, const std::string& doc_id) const;
    bool has_query(const std::string& query_id) const;

    /// All judgments for one query; empty map when the query has none.
    const std::map<std::string, RelevanceGrade>& for_query(const std::string& query_id) const;
    const std::map<std::string, std::map<std::string, RelevanceGrade>>& all() const noexcept
    {
        return grades_;
    }
    std::size_t size() const noexcept;

   private:
    std::map<std::string, std::map<std::string, RelevanceGrade>> grades_;
};

/// Id → text lookup used by backends that need passage content.
class DocumentStore {
   public:
    DocumentStore() = default;
    explicit DocumentStore(std::span<const Document> docs);

    void add(Document doc);
    /// Document for `id`; an empty-text placeholder when unknown.
    Document get(const std::string& id) const;
    bool contains(const std::string& id) const { return texts_.contains(id); }
    std::size_t size() const noexcept { return texts_.size(); }

   private:
    std::unordered_map<std::string, std::string> texts_;
};

}  // namespace pivotrank
