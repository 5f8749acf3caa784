#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pivotrank/types.hpp"

namespace pivotrank {

/// Parameters of a synthetic retrieval benchmark. Each query owns a small
/// term cluster; a grade-g doc carries g sentences containing every query
/// term, so BM25, the oracle generator and the oracle judge agree on topicality.
struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t num_queries = 50;
    std::size_t m = 100;                // run depth per query
    std::size_t docs_per_query = 0;     // corpus docs owned by each query; 0 means m
    std::array<double, 4> grade_distribution{0.6, 0.25, 0.1, 0.05};
    double quality = 0.5;               // 0: rank independent of grade, 1: grade-sorted
    std::size_t vocab_size = 2000;      // background words
    std::size_t doc_length = 12;        // words per sentence
    /// When > 0, every doc with grade >= 2 is placed within the first
    /// `relevant_depth` ranks of the run.
    std::size_t relevant_depth = 0;

    std::size_t corpus_per_query() const noexcept { return docs_per_query == 0 ? m : docs_per_query; }
    void validate() const;
};

struct SynthData {
    std::vector<Document> corpus;
    std::vector<Query> queries;
    Qrels qrels;
    Run run;
    /// Per query: the first-stage score of the lowest-ranked doc with grade
    /// >= 2 (max score + 1 when there is none), i.e. the score an ideal
    /// boundary pivot would receive.
    std::map<std::string, double> pivot_scores;
};

SynthData generate_synth(const SynthSpec& spec);

/// Writes corpus.jsonl, queries.jsonl, qrels.txt, run.txt and
/// pivot_scores.json into `dir` (created if missing).
void write_synth(const SynthData& data, const std::string& dir);

std::map<std::string, double> load_pivot_scores(const std::string& path);

}  // namespace pivotrank
