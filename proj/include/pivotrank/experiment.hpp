#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pivotrank/bm25.hpp"
#include "pivotrank/chat_client.hpp"
#include "pivotrank/metrics.hpp"
#include "pivotrank/pivot.hpp"
#include "pivotrank/rerankers.hpp"
#include "pivotrank/schedulers.hpp"
#include "pivotrank/synth.hpp"
#include "pivotrank/truncation.hpp"

namespace pivotrank {

enum class PolicyKind {
    FixedK,
    PsiDyn,
    PsiAvg,
    Cascade,
    Sliding,
    Snow,
    VsSliding,
    TdPart,
    GptdPart,
};
std::string_view to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(std::string_view name);
bool policy_needs_pivot(PolicyKind kind);
bool policy_is_listwise(PolicyKind kind);

enum class StageReranker { Pointwise, Pairwise };

struct StageConfig {
    TruncationMode mode = TruncationMode::Dyn;
    StageReranker reranker = StageReranker::Pointwise;
    PairwiseScheme scheme = PairwiseScheme::AllPairs;
};

/// A declarative pipeline: first stage, optional pivot, policy, evaluation.
/// See README for the JSON layout; relative paths resolve against the
/// config file's directory.
struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    std::size_t workers = 1;        // concurrent queries
    std::size_t inner_workers = 1;  // concurrent calls inside one parallel batch

    // Data: either files or an in-memory synthetic benchmark.
    std::optional<SynthSpec> synth;
    std::string corpus_path;
    std::string queries_path;
    std::string qrels_path;
    std::string run_path;           // run-file first stage
    std::string pivot_scores_path;  // first-stage pivot scores for run-file input

    bool first_stage_bm25 = true;
    std::size_t depth = 100;
    Bm25Params bm25;

    // Pivot generation and verification.
    std::string pivot_generator = "oracle";  // oracle | http
    std::string pivot_judge = "oracle";      // oracle | http | none
    int tau = 2;
    LengthBounds length;  // max_tokens 0 means the corpus-derived default
    int max_attempts = 3;
    std::string pivot_cache_path;
    ChatConfig pivot_chat;
    /// "text" scores the generated pivot with BM25; "file" reads
    /// pivot_scores_path. Defaults to "file" when that path is set.
    std::string pivot_score_source;

    PolicyKind policy = PolicyKind::PsiDyn;
    std::size_t fixed_k = 100;
    StageConfig rerank_stage;          // fixed-k, psi-dyn, psi-avg
    std::vector<StageConfig> stages;   // cascade
    WindowSpec window;
    std::size_t anchor_k = 10;
    std::size_t max_merge_depth = 10;

    std::string backend = "oracle";  // oracle | http (listwise only)
    NoiseModel noise;
    double pivot_utility = OracleJudgments::kDefaultPivotUtility;
    ChatConfig backend_chat;
    ListwisePrompt listwise_prompt;
    int listwise_parse_retries = 2;

    std::vector<std::string> calibration_queries;
    double calibration_fraction = 0.0;

    MetricConfig metrics;
    std::vector<CallKind> ipq_kinds{kRerankKinds.begin(), kRerankKinds.end()};
    CostModel cost;
    bool wall_clock = false;  // adds a measured SU_wall aggregate (not reproducible)

    std::string output_dir;

    static ExperimentConfig from_json(const std::string& text, const std::string& base_dir = ".");
    static ExperimentConfig load(const std::string& path);
    void validate() const;
};

/// Outputs of one experiment, already serialized.
struct ExperimentResult {
    MetricReport report;
    Run run;
    std::string run_text;     // TREC run
    std::string trace_json;   // per-query schedule traces, cut depths, pivots, call counts
    std::string ledger_json;  // per-query counts for every call kind
    std::string cutoffs_csv;  // histogram of first-stage cut depths
};

/// Runs the pipeline. Every input file is read and validated before any
/// backend is called. When output_dir is set, artifacts are written there;
/// on failure a FAILED marker with the error is written instead and the
/// error is rethrown with the failing stage's name.
ExperimentResult run_experiment(const ExperimentConfig& config);

void write_artifacts(const ExperimentResult& result, const std::string& dir);

/// Planned backend call counts per query without calling any backend.
std::string plan_experiment(const ExperimentConfig& config);

}  // namespace pivotrank
