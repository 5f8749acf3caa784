#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pivotrank/types.hpp"

namespace pivotrank {

/// Lowercase ASCII, split on every byte that is not [A-Za-z0-9], drop empty
/// tokens. Bytes >= 0x80 are kept inside tokens so UTF-8 words stay whole.
/// No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// Retriever-assigned position of the pivot within a ranked list.
struct PivotRank {
    std::size_t position = 1;  // 1-based; size()+1 when below every doc
    double pivot_score = 0.0;
};

/// In-memory inverted index with Okapi BM25 scoring.
///
///   idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
///   w(t, d)  = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
///   s(q, d)  = sum over distinct query terms t of qtf(t) * w(t, d)
///
/// Terms are summed in lexicographic order so scores are bit-identical no
/// matter how the corpus was ordered at build time.
class Bm25Index {
   public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    static Bm25Index build(std::span<const Document> corpus, Bm25Params params = {});

    /// Top-min(m, matches) docs; zero-score docs excluded; ties by doc id.
    RankedList retrieve(const Query& query, std::size_t m) const;

    /// BM25 of out-of-corpus text using this index's idf and avgdl.
    double score_text(const Query& query, std::string_view text) const;

    double idf(const std::string& term) const;
    std::size_t document_frequency(const std::string& term) const;
    std::size_t num_docs() const noexcept { return doc_ids_.size(); }
    double avgdl() const noexcept { return avgdl_; }
    const Bm25Params& params() const noexcept { return params_; }
    const std::string& doc_id(std::size_t ordinal) const { return doc_ids_.at(ordinal); }
    std::uint32_t doc_length(std::size_t ordinal) const { return doc_lengths_.at(ordinal); }
    const std::vector<Posting>& postings(const std::string& term) const;

    // Versioned JSON format ("pivotrank-bm25", version 1), see README.
    std::string to_json() const;
    static Bm25Index from_json(const std::string& text);
    void save(const std::string& path) const;
    static Bm25Index load(const std::string& path);

   private:
    double term_weight(double idf, std::uint32_t tf, std::uint32_t doc_len) const;
    void finalize();

    Bm25Params params_;
    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    double avgdl_ = 0.0;
};

/// k_p = 1 + number of docs scoring >= pivot_score; ties rank ahead of the
/// pivot, matching the truncation tie rule.
PivotRank insert_rank(const RankedList& list, double pivot_score);

}  // namespace pivotrank
