#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pivotrank/chat_client.hpp"
#include "pivotrank/types.hpp"

namespace pivotrank {

enum class CallKind { Pointwise, Pairwise, Listwise, PivotGen, Judge, PivotScore };
inline constexpr std::size_t kNumCallKinds = 6;
inline constexpr std::array<CallKind, kNumCallKinds> kAllCallKinds{
    CallKind::Pointwise, CallKind::Pairwise, CallKind::Listwise,
    CallKind::PivotGen,  CallKind::Judge,    CallKind::PivotScore};

std::string_view to_string(CallKind kind);
CallKind call_kind_from_string(std::string_view name);

/// Per-query backend call counters. Thread-safe; counts only ever grow.
class InferenceLedger {
   public:
    using Counts = std::array<std::uint64_t, kNumCallKinds>;

    InferenceLedger() = default;
    explicit InferenceLedger(std::map<CallKind, double> cost_units)
        : cost_units_(std::move(cost_units))
    {}

    void record(const std::string& query_id, CallKind kind, std::uint64_t n = 1);
    std::uint64_t count(const std::string& query_id, CallKind kind) const;
    std::uint64_t total(CallKind kind) const;
    std::map<std::string, Counts> snapshot() const;

    /// Sum over kinds of count * cost unit (kinds without a unit weigh 1).
    double modeled_cost(const std::string& query_id) const;

   private:
    mutable std::mutex mu_;
    std::map<std::string, Counts> counts_;
    std::map<CallKind, double> cost_units_;
};

/// Window-local ordering: order[i] is the window index placed at rank i.
struct ListwisePermutation {
    std::vector<std::size_t> order;

    /// Throws InvariantError unless `order` is a permutation of 0..length-1.
    static ListwisePermutation checked(std::vector<std::size_t> order, std::size_t length);
};

// Backend interfaces. Implementations must tolerate concurrent calls.

class PointwiseBackend {
   public:
    virtual ~PointwiseBackend() = default;
    virtual double score(const Query& query, const Document& doc) const = 0;
};

class PairwiseBackend {
   public:
    virtual ~PairwiseBackend() = default;
    /// True when `a` should rank above `b`.
    virtual bool prefers_first(const Query& query, const Document& a, const Document& b) const = 0;
};

class ListwiseBackend {
   public:
    virtual ~ListwiseBackend() = default;
    virtual std::vector<std::size_t> rank(const Query& query,
                                          std::span<const Document> window) const = 0;
};

// Ledger-recording entry points. Each call records exactly one inference
// (pairwise_rerank records one per comparison).

double pointwise_score(const PointwiseBackend& backend, const Query& query, const Document& doc,
                       InferenceLedger& ledger);

/// Returns whichever of `a`, `b` the backend prefers.
const Document& pairwise_prefer(const PairwiseBackend& backend, const Query& query,
                                const Document& a, const Document& b, InferenceLedger& ledger);

enum class PairwiseScheme {
    AllPairs,    // C(n,2) comparisons, score = wins, ties by prior order
    SinglePass,  // one bottom-up adjacent sweep, n-1 comparisons
};
PairwiseScheme pairwise_scheme_from_string(std::string_view name);

/// Rerank `docs` (given in prior order). Output scores are synthetic ranks;
/// ScoredDoc::model_score holds the win count (all-pairs) where defined.
RankedList pairwise_rerank(const PairwiseBackend& backend, const Query& query,
                           std::span<const Document> docs, PairwiseScheme scheme,
                           InferenceLedger& ledger);

ListwisePermutation listwise_rank(const ListwiseBackend& backend, const Query& query,
                                  std::span<const Document> window, InferenceLedger& ledger);

// Pivot documents travel through windows under a reserved id.
inline constexpr std::string_view kPivotIdPrefix = "pivot::";
std::string pivot_doc_id(const std::string& query_id);
bool is_pivot_id(std::string_view doc_id);

/// Hidden ground truth shared by the oracle backends.
///
/// Utility of a doc is its qrels grade (0 when unjudged); pivot ids get
/// `pivot_utility`, which must lie in (1.5, 2) so every backend kind orders
/// the pivot strictly between grade-1 and grade-2 docs.
class OracleJudgments {
   public:
    static constexpr double kDefaultPivotUtility = 1.75;
    static constexpr std::size_t kUnranked = static_cast<std::size_t>(-1);

    OracleJudgments(Qrels qrels, const Run& first_stage,
                    double pivot_utility = kDefaultPivotUtility);

    double utility(const std::string& query_id, const std::string& doc_id) const;
    /// 1-based first-stage rank, kUnranked when the doc is not in the run.
    std::size_t first_stage_rank(const std::string& query_id, const std::string& doc_id) const;
    /// Strict total order: utility desc, first-stage rank asc, doc id asc.
    bool before(const std::string& query_id, const std::string& a, const std::string& b) const;
    /// utility + 1/(1 + first-stage rank); the rank term is 0 when unranked.
    double score(const std::string& query_id, const std::string& doc_id) const;

    const Qrels& qrels() const noexcept { return qrels_; }
    double pivot_utility() const noexcept { return pivot_utility_; }

   private:
    Qrels qrels_;
    std::map<std::string, std::map<std::string, std::size_t>> ranks_;
    double pivot_utility_;
};

/// Controlled degradation of oracle output.
struct NoiseModel {
    double epsilon = 0.0;  // per-step swap / flip probability
    std::uint64_t seed = 0;
    int passes_per_item = 1;  // listwise: passes_per_item * L adjacent sweeps

    void validate() const;
};

/// Noiseless (epsilon = 0) it sorts by OracleJudgments::before. With noise:
///  - pointwise adds epsilon * U(-1, 1);
///  - pairwise flips the oracle answer with probability epsilon;
///  - listwise applies adjacent transpositions with probability epsilon.
/// Randomness is derived from (seed, query id, call contents), so results do
/// not depend on call order or threading.
class OracleReranker final : public PointwiseBackend,
                             public PairwiseBackend,
                             public ListwiseBackend {
   public:
    explicit OracleReranker(std::shared_ptr<const OracleJudgments> truth, NoiseModel noise = {});

    double score(const Query& query, const Document& doc) const override;
    bool prefers_first(const Query& query, const Document& a, const Document& b) const override;
    std::vector<std::size_t> rank(const Query& query,
                                  std::span<const Document> window) const override;

    const OracleJudgments& truth() const noexcept { return *truth_; }

   private:
    std::shared_ptr<const OracleJudgments> truth_;
    NoiseModel noise_;
};

/// Extract bracketed 1-based ids ("[2] > [3] > [1]") as 0-based indices,
/// dropping out-of-range ones.
std::vector<std::size_t> parse_bracket_ids(std::string_view text, std::size_t length);

/// Deduplicate, then append missing ids in window order.
std::vector<std::size_t> repair_permutation(std::span<const std::size_t> ids, std::size_t length);

/// RankGPT-style prompt pieces. {num} and {query} are substituted.
struct ListwisePrompt {
    std::string system =
        "You are RankGPT, an intelligent assistant that can rank passages based on their "
        "relevancy to the query.";
    std::string preamble =
        "I will provide you with {num} passages, each indicated by number identifier []. "
        "Rank the passages based on their relevance to query: {query}.";
    std::string instruction =
        "Search Query: {query}.\nRank the {num} passages above based on their relevance to the "
        "search query. The passages should be listed in descending order using identifiers. The "
        "most relevant passages should be listed first. The output format should be [] > [], "
        "e.g., [1] > [2]. Only respond with the ranking results, do not say any word or explain.";
    std::size_t max_passage_words = 300;
};

std::vector<ChatMessage> render_listwise_messages(const ListwisePrompt& prompt, const Query& query,
                                                  std::span<const Document> window);

/// Listwise reranker backed by a chat-completions endpoint. Output with no
/// usable identifier is re-requested up to `parse_retries` times.
class HttpListwiseBackend final : public ListwiseBackend {
   public:
    HttpListwiseBackend(ChatConfig cfg, ListwisePrompt prompt = {}, int parse_retries = 2);

    std::vector<std::size_t> rank(const Query& query,
                                  std::span<const Document> window) const override;

   private:
    ChatClient client_;
    ListwisePrompt prompt_;
    int parse_retries_;
};

}  // namespace pivotrank
