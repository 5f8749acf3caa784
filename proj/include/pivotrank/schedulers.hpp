#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pivotrank/bm25.hpp"
#include "pivotrank/rerankers.hpp"
#include "pivotrank/types.hpp"

namespace pivotrank {

/// Window size and strides, counted in documents.
struct WindowSpec {
    std::size_t w = 20;
    std::size_t stride = 10;
    std::size_t s_max = 0;  // 0 means w

    std::size_t max_stride() const noexcept { return s_max == 0 ? w : s_max; }
    /// Requires w >= 2, 1 <= stride <= w, 1 <= max_stride() <= w.
    void validate() const;
};

/// One listwise call. Positions are 1-based and inclusive, relative to the
/// list being processed at `level` (0 = the input list, > 0 = a merge list).
struct WindowRecord {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t above_pivot = 0;  // docs ranked above the pivot/anchor
    std::size_t stride = 0;       // sliding step that reached this window; 0 when n/a
    std::size_t level = 0;
};

struct ScheduleTrace {
    std::string method;
    std::size_t m = 0;
    std::vector<WindowRecord> windows;
    std::size_t listwise_calls = 0;
    /// Calls per serial step; calls inside one step may run concurrently.
    std::vector<std::size_t> batches;

    std::size_t parallelizable_batches() const noexcept { return batches.size(); }
};

/// A window reranked together with the pivot, split at the pivot.
struct WindowResult {
    std::size_t window_index = 0;
    std::vector<std::string> above_pivot;
    std::vector<std::string> below_pivot;
    ListwisePermutation permutation;
};

struct ScheduleResult {
    RankedList list;  // synthetic descending scores
    ScheduleTrace trace;
};

/// Everything a scheduler needs besides the list itself.
struct RerankContext {
    const Query& query;
    const DocumentStore& docs;
    const ListwiseBackend& ranker;
    InferenceLedger& ledger;
    std::size_t batch_workers = 1;  // threads for parallelizable batches
};

/// Fixed-stride bottom-up sliding window. Calls: ceil((m - w) / S) + 1, or 1 when m <= w.
ScheduleResult sliding_window(const RerankContext& ctx, const RankedList& list,
                              const WindowSpec& spec);

/// ceil(m / w) disjoint windows, each reranked with the pivot in one parallel
/// batch; above-pivot docs of all windows are concatenated ahead of the
/// below-pivot docs, then the first w of that order get one final pass.
ScheduleResult snow(const RerankContext& ctx, const RankedList& list, const Document& pivot,
                    const WindowSpec& spec);

/// Bottom-up sliding window with the pivot in every window; the next stride is
/// max(1, min(S_max, w - |D+|)). Ends with a window clamped to ranks 1..w.
ScheduleResult vs_sliding(const RerankContext& ctx, const RankedList& list,
                          const Document& pivot, const WindowSpec& spec);

/// Top-down partitioning around an internal anchor: the anchor_k-th doc of
/// the reranked top window. Deep windows of w - 1 docs plus the anchor run as
/// one batch; promoted docs are merged with the top of the first window.
ScheduleResult td_part(const RerankContext& ctx, const RankedList& list, const WindowSpec& spec,
                       std::size_t anchor_k = 10, std::size_t max_merge_depth = 10);

/// Top-down partitioning anchored on the generated pivot. Deep windows cover
/// ranks w+1 .. max(k_p, w); docs beyond that keep first-stage order.
/// `anchor_k` is used only when a merge list outgrows one window.
ScheduleResult gptd_part(const RerankContext& ctx, const RankedList& list,
                         const Document& pivot, const PivotRank& pivot_rank,
                         const WindowSpec& spec, std::size_t anchor_k = 10,
                         std::size_t max_merge_depth = 10);

enum class ListwiseMethod { Sliding, Snow, VsSliding, TdPart, GptdPart };
std::string_view to_string(ListwiseMethod method);
ListwiseMethod listwise_method_from_string(std::string_view name);
bool uses_pivot(ListwiseMethod method);

/// Listwise call count bounds for planning (--dry-run). `max` is empty when
/// the count depends on promotions without a useful closed bound.
struct CallPlan {
    std::size_t min = 0;
    std::optional<std::size_t> max;
};
CallPlan plan_listwise_calls(ListwiseMethod method, std::size_t m, const WindowSpec& spec,
                             std::optional<std::size_t> pivot_position = std::nullopt);

/// Trace the sliding baseline would produce on a list of m docs, without
/// calling any backend.
ScheduleTrace sliding_baseline_trace(std::size_t m, const WindowSpec& spec);

}  // namespace pivotrank
