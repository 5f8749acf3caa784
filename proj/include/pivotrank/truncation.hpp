#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pivotrank/rerankers.hpp"
#include "pivotrank/types.hpp"

namespace pivotrank {

enum class TruncationMode { Dyn, Avg, Fixed };
std::string_view to_string(TruncationMode mode);
TruncationMode truncation_mode_from_string(std::string_view name);

/// Split of a ranked list into the head to rerank (D+) and the untouched tail (D-).
struct TruncationDecision {
    TruncationMode mode = TruncationMode::Dyn;
    double threshold = 0.0;  // +inf for Fixed
    std::size_t cut_depth = 0;
    std::vector<std::string> d_plus_ids;
    std::vector<std::string> d_minus_ids;
};

/// D+ = docs scoring >= threshold (ties go to D+), D- = the rest, both in list order.
/// Since the list is sorted, D+ is always a prefix.
TruncationDecision partition_dyn(const RankedList& list, double pivot_score);

/// Same split against a fixed threshold, tagged as Avg.
TruncationDecision partition_avg(const RankedList& list, double theta_bar);

/// Top-k baseline; threshold is +inf.
TruncationDecision partition_fixed(const RankedList& list, std::size_t k);

/// Mean pivot score over a calibration query set, tagged with the scorer that
/// produced the scores.
struct CalibrationStats {
    double theta_bar = 0.0;
    std::set<std::string> calibration_query_ids;
    std::map<std::string, double> per_query_scores;
    std::string scorer_id;

    /// Throws if any test query was used for calibration.
    void check_disjoint(std::span<const std::string> test_query_ids) const;
    /// Throws if the stats were computed with a different scorer.
    void check_scorer(std::string_view id) const;

    std::string to_json() const;
    static CalibrationStats from_json(const std::string& text);
};

CalibrationStats calibrate_avg(std::span<const std::string> calibration_queries,
                               const std::map<std::string, double>& pivot_scores,
                               std::string scorer_id);

/// The reranker applied to D+: a pointwise scorer or a pairwise comparator.
class TruncationReranker {
   public:
    static TruncationReranker pointwise(const PointwiseBackend& backend);
    static TruncationReranker pairwise(const PairwiseBackend& backend, PairwiseScheme scheme);

    /// Rerank `docs` (prior order). Pointwise: n calls, ties keep prior order;
    /// model_score holds the backend score.
    RankedList rerank(const Query& query, std::span<const Document> docs,
                      InferenceLedger& ledger) const;

    const PointwiseBackend* pointwise_backend() const noexcept { return pointwise_; }

   private:
    const PointwiseBackend* pointwise_ = nullptr;
    const PairwiseBackend* pairwise_ = nullptr;
    PairwiseScheme scheme_ = PairwiseScheme::AllPairs;
};

/// rerank(D+) followed by D- unchanged. Scores are rewritten to m, m-1, ..., 1;
/// reranker scores of the head stay in ScoredDoc::model_score.
RankedList psi_rank(const RankedList& list, const TruncationDecision& decision,
                    const Query& query, const DocumentStore& docs,
                    const TruncationReranker& reranker, InferenceLedger& ledger);

struct CascadeStage {
    TruncationMode mode = TruncationMode::Dyn;  // Dyn or Avg
    std::optional<double> avg_threshold;        // required for Avg
    TruncationReranker reranker;
};

/// Score of the pivot under a pointwise stage scorer; recorded as a
/// pivot_score inference, not a reranking call.
double stage_pivot_score(const PointwiseBackend& scorer, const Query& query, const Document& pivot,
                         InferenceLedger& ledger);

/// Repeated truncate-and-rerank. Stage 0 partitions by first-stage scores
/// against `first_stage_pivot_score` (Dyn) or its theta_bar (Avg). Stage i > 0
/// partitions the previous stage's reranked head by that stage's reranker
/// scores; the pivot is scored by the same (pointwise) reranker. Output is
/// final head, then each stage's D- from the last stage back to the first.
RankedList cascade(const RankedList& list, const Query& query, const DocumentStore& docs,
                   const Document& pivot, double first_stage_pivot_score,
                   std::span<const CascadeStage> stages, InferenceLedger& ledger,
                   std::vector<TruncationDecision>* decisions = nullptr);

}  // namespace pivotrank
