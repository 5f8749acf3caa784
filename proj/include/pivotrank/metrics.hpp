#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pivotrank/rerankers.hpp"
#include "pivotrank/schedulers.hpp"
#include "pivotrank/types.hpp"

namespace pivotrank {

enum class Gain { Exponential, Linear };  // 2^g - 1, or g
Gain gain_from_string(std::string_view name);
std::string_view to_string(Gain gain);

/// 0 when the query has no positively judged doc.
double ndcg_at_k(const RankedList& run, const Qrels& qrels, std::size_t k,
                 Gain gain = Gain::Exponential);

/// Average precision at cutoff k with rel(d) = grade >= threshold. The
/// denominator is the total number of relevant docs in qrels.
double ap_at_k(const RankedList& run, const Qrels& qrels, std::size_t k = 100, int threshold = 2);

/// Mean count of the selected call kinds per query.
double ipq(const InferenceLedger& ledger, std::span<const std::string> query_ids,
           std::span<const CallKind> kinds);
double ipq(const InferenceLedger& ledger, std::span<const std::string> query_ids);

/// Reranker kinds counted by default (pivot generation, judging and pivot
/// scoring are excluded).
inline constexpr std::array<CallKind, 3> kRerankKinds{CallKind::Pointwise, CallKind::Pairwise,
                                                      CallKind::Listwise};

struct CostModel {
    std::map<CallKind, double> weights;  // missing kinds weigh 1
    std::size_t parallelism = 1;

    double weight(CallKind kind) const;
    void validate() const;
};

/// Sum over serial batches of ceil(calls / parallelism) * listwise weight,
/// plus pivot_cost.
double modeled_time(const ScheduleTrace& trace, const CostModel& cost, double pivot_cost = 0.0);

/// baseline time / method time; the pivot cost is charged to the method only.
double speedup(const ScheduleTrace& method, const ScheduleTrace& baseline, const CostModel& cost,
               double pivot_cost = 0.0);

struct MetricConfig {
    std::vector<std::size_t> ndcg_k{10};
    std::size_t map_k = 100;
    int threshold = 2;
    Gain gain = Gain::Exponential;

    void validate() const;
};

/// Per-query and aggregate metrics of one run. Aggregates are means over
/// queries that have qrels, plus IPQ/SU when an experiment supplies them.
struct MetricReport {
    std::string label;
    MetricConfig config;
    std::map<CallKind, double> cost_weights;  // echo; empty outside experiments
    std::size_t parallelism = 1;
    std::map<std::string, std::map<std::string, double>> per_query;
    std::vector<std::pair<std::string, double>> aggregates;  // display order
    std::size_t queries_evaluated = 0;
    std::size_t queries_without_qrels = 0;

    std::optional<double> aggregate(std::string_view name) const;
    void set_aggregate(const std::string& name, double value);

    std::string to_json() const;
    static MetricReport from_json(const std::string& text);
};

std::string ndcg_name(std::size_t k);  // "nDCG@10"
std::string map_name(std::size_t k);   // "MAP@100"

/// Evaluate every query of `run`; queries absent from qrels are skipped and
/// counted.
MetricReport evaluate_run(const Run& run, const Qrels& qrels, const MetricConfig& config,
                          std::string label);

/// Aligned table, one row per report. `*` marks the best value of a column
/// and `_` the second best; lower is better for IPQ. Throws when reports
/// cover different query sets or metric configurations.
std::string compare_reports(std::span<const MetricReport> reports);

}  // namespace pivotrank
