#include "pivotrank/schedulers.hpp"

#include <algorithm>
#include <unordered_set>

#include "pivotrank/parallel.hpp"

namespace pivotrank {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct Window {
    std::vector<std::string> ids;
    WindowRecord record;
    std::string anchor;  // above_pivot counts docs ranked above this id
};

class Scheduler {
   public:
    Scheduler(const RerankContext& ctx, const RankedList& list, const Document* pivot,
              std::string method)
        : ctx_(ctx), list_(list), pivot_(pivot)
    {
        trace_.method = std::move(method);
        trace_.m = list.size();
        if (list.empty()) {
            throw std::invalid_argument(trace_.method + ": empty ranked list");
        }
        if (list.query_id() != ctx.query.id) {
            throw std::invalid_argument(trace_.method + ": list is for query " + list.query_id()
                                        + ", context is for " + ctx.query.id);
        }
        if (pivot_) {
            for (const auto& e : list.entries()) {
                if (e.doc_id == pivot_->id) {
                    throw std::invalid_argument("pivot id " + pivot_->id
                                                + " collides with a listed doc");
                }
            }
        }
    }

    const std::string& pivot_id() const { return pivot_->id; }

    /// One serial step with a single call.
    std::vector<std::string> rank(Window w)
    {
        std::vector<Window> one;
        one.push_back(std::move(w));
        return std::move(rank_batch(std::move(one)).front());
    }

    /// One serial step whose calls may run concurrently. Results are in
    /// window order regardless of completion order.
    std::vector<std::vector<std::string>> rank_batch(std::vector<Window> windows)
    {
        std::vector<std::vector<std::string>> out(windows.size());
        parallel_for(windows.size(), ctx_.batch_workers,
                     [&](std::size_t i) { out[i] = call(windows[i]); });
        for (std::size_t i = 0; i < windows.size(); ++i) {
            auto rec = windows[i].record;
            if (!windows[i].anchor.empty()) {
                auto it = std::find(out[i].begin(), out[i].end(), windows[i].anchor);
                rec.above_pivot = static_cast<std::size_t>(it - out[i].begin());
            }
            trace_.windows.push_back(rec);
        }
        trace_.listwise_calls += windows.size();
        if (!windows.empty()) {
            trace_.batches.push_back(windows.size());
        }
        return out;
    }

    ScheduleResult finish(const std::vector<std::string>& order)
    {
        std::vector<std::string> clean;
        clean.reserve(order.size());
        std::unordered_set<std::string> seen;
        for (const auto& id : order) {
            if ((pivot_ && id == pivot_->id) || !seen.insert(id).second) {
                continue;
            }
            clean.push_back(id);
        }
        if (clean.size() != list_.size()) {
            throw InvariantError(trace_.method + ": output is not a permutation of the input");
        }
        for (const auto& e : list_.entries()) {
            if (!seen.contains(e.doc_id)) {
                throw InvariantError(trace_.method + ": output lost doc " + e.doc_id);
            }
        }
        return {RankedList::from_order(list_.query_id(), clean), std::move(trace_)};
    }

   private:
    std::vector<std::string> call(const Window& w) const
    {
        std::vector<Document> docs;
        docs.reserve(w.ids.size());
        for (const auto& id : w.ids) {
            docs.push_back(pivot_ && id == pivot_->id ? *pivot_ : ctx_.docs.get(id));
        }
        try {
            auto perm = listwise_rank(ctx_.ranker, ctx_.query, docs, ctx_.ledger);
            std::vector<std::string> ranked;
            ranked.reserve(w.ids.size());
            for (auto i : perm.order) {
                ranked.push_back(w.ids[i]);
            }
            return ranked;
        } catch (const std::exception& e) {
            throw std::runtime_error(trace_.method + " window [" + std::to_string(w.record.start)
                                     + ", " + std::to_string(w.record.end) + "]: " + e.what());
        }
    }

    const RerankContext& ctx_;
    const RankedList& list_;
    const Document* pivot_;
    ScheduleTrace trace_;
};

Window make_window(std::vector<std::string> ids, std::size_t start, std::size_t end,
                   std::size_t stride = 0, std::size_t level = 0, std::string anchor = {})
{
    Window w;
    w.ids = std::move(ids);
    w.record.start = start;
    w.record.end = end;
    w.record.stride = stride;
    w.record.level = level;
    w.anchor = std::move(anchor);
    return w;
}

std::vector<std::string> slice(const std::vector<std::string>& v, std::size_t b, std::size_t e)
{
    return {v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(e)};
}

void write_back(std::vector<std::string>& ids, std::size_t begin,
                const std::vector<std::string>& ranked, const std::string& skip = {})
{
    for (const auto& id : ranked) {
        if (!skip.empty() && id == skip) {
            continue;
        }
        ids[begin++] = id;
    }
}

std::vector<std::string> with_pivot(std::vector<std::string> ids, const std::string& pivot)
{
    ids.push_back(pivot);
    return ids;
}

// Deep windows of (w - 1) docs over ids[begin, end), each with `anchor`
// appended, as one batch. Returns the promoted docs in window order.
std::vector<std::string> partition_deep(Scheduler& s, const std::vector<std::string>& ids,
                                        std::size_t begin, std::size_t end, std::size_t w,
                                        const std::string& anchor, std::size_t level)
{
    std::vector<Window> windows;
    for (std::size_t b = begin; b < end; b += w - 1) {
        const auto e = std::min(end, b + w - 1);
        windows.push_back(make_window(with_pivot(slice(ids, b, e), anchor), b + 1, e, 0, level,
                                      anchor));
    }
    std::vector<std::string> promoted;
    for (auto& ranked : s.rank_batch(std::move(windows))) {
        for (const auto& id : ranked) {
            if (id == anchor) {
                break;
            }
            promoted.push_back(id);
        }
    }
    return promoted;
}

std::vector<std::string> concat_unpromoted(std::vector<std::string> head,
                                           const std::vector<std::string>& ids, std::size_t begin,
                                           std::size_t end,
                                           const std::vector<std::string>& promoted)
{
    std::unordered_set<std::string> p(promoted.begin(), promoted.end());
    for (std::size_t i = begin; i < end; ++i) {
        if (!p.contains(ids[i])) {
            head.push_back(ids[i]);
        }
    }
    return head;
}

struct TdParams {
    std::size_t w;
    std::size_t anchor_k;
    std::size_t max_depth;
    std::string pivot_id;  // empty when no external pivot is in play
};

// Top-down partitioning of `ids` with an internal anchor. Returns a full
// ordering of `ids`.
std::vector<std::string> td_core(Scheduler& s, const std::vector<std::string>& ids,
                                 const TdParams& p, std::size_t level)
{
    const bool has_pivot =
        !p.pivot_id.empty() && std::find(ids.begin(), ids.end(), p.pivot_id) != ids.end();
    const std::size_t limit = p.w + (has_pivot ? 1 : 0);
    if (ids.size() <= limit) {
        return s.rank(make_window(ids, 1, ids.size(), 0, level));
    }

    const auto top = s.rank(make_window(slice(ids, 0, p.w), 1, p.w, 0, level));
    const auto anchor = top[p.anchor_k - 1];
    const auto promoted = partition_deep(s, ids, p.w, ids.size(), p.w, anchor, level);

    if (promoted.empty()) {
        auto out = top;
        out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(p.w), ids.end());
        return out;
    }

    std::vector<std::string> merge_list(top.begin(),
                                        top.begin() + static_cast<std::ptrdiff_t>(p.anchor_k));
    merge_list.insert(merge_list.end(), promoted.begin(), promoted.end());
    if (level + 1 > p.max_depth) {
        throw std::runtime_error("top-down merge exceeded depth " + std::to_string(p.max_depth));
    }
    auto out = td_core(s, merge_list, p, level + 1);
    out.insert(out.end(), top.begin() + static_cast<std::ptrdiff_t>(p.anchor_k), top.end());
    return concat_unpromoted(std::move(out), ids, p.w, ids.size(), promoted);
}

}  // namespace

void WindowSpec::validate() const
{
    if (w < 2) {
        throw std::invalid_argument("window size must be >= 2");
    }
    if (stride < 1 || stride > w) {
        throw std::invalid_argument("stride must lie in [1, w]");
    }
    if (max_stride() < 1 || max_stride() > w) {
        throw std::invalid_argument("maximum stride must lie in [1, w]");
    }
}

ScheduleResult sliding_window(const RerankContext& ctx, const RankedList& list,
                              const WindowSpec& spec)
{
    spec.validate();
    Scheduler s(ctx, list, nullptr, "sliding");
    auto ids = list.ids();
    const auto m = ids.size();
    const auto w = spec.w;
    if (m <= w) {
        auto ranked = s.rank(make_window(ids, 1, m, spec.stride));
        return s.finish(ranked);
    }
    std::size_t end = m;
    std::size_t prev_end = m + spec.stride;
    while (end > w) {
        auto ranked = s.rank(make_window(slice(ids, end - w, end), end - w + 1, end, prev_end - end));
        write_back(ids, end - w, ranked);
        prev_end = end;
        end = end > spec.stride ? end - spec.stride : 0;
    }
    auto ranked = s.rank(make_window(slice(ids, 0, w), 1, w, prev_end - w));
    write_back(ids, 0, ranked);
    return s.finish(ids);
}

ScheduleResult snow(const RerankContext& ctx, const RankedList& list, const Document& pivot,
                    const WindowSpec& spec)
{
    spec.validate();
    Scheduler s(ctx, list, &pivot, "snow");
    const auto ids = list.ids();
    const auto m = ids.size();
    const auto w = spec.w;
    const auto k = ceil_div(m, w);

    std::vector<Window> windows;
    for (std::size_t j = 0; j < k; ++j) {
        const auto b = j * w;
        const auto e = std::min(m, b + w);
        windows.push_back(make_window(with_pivot(slice(ids, b, e), pivot.id), b + 1, e, w, 0,
                                      pivot.id));
    }
    auto ranked = s.rank_batch(std::move(windows));

    std::vector<WindowResult> parts;
    for (std::size_t j = 0; j < ranked.size(); ++j) {
        WindowResult r;
        r.window_index = j;
        bool below = false;
        for (const auto& id : ranked[j]) {
            if (id == pivot.id) {
                below = true;
            } else {
                (below ? r.below_pivot : r.above_pivot).push_back(id);
            }
        }
        parts.push_back(std::move(r));
    }
    std::vector<std::string> merged;
    for (const auto& r : parts) {
        merged.insert(merged.end(), r.above_pivot.begin(), r.above_pivot.end());
    }
    for (const auto& r : parts) {
        merged.insert(merged.end(), r.below_pivot.begin(), r.below_pivot.end());
    }

    const auto head = std::min(w, merged.size());
    auto final_pass = s.rank(make_window(slice(merged, 0, head), 1, head, 0, 1));
    write_back(merged, 0, final_pass);
    return s.finish(merged);
}

ScheduleResult vs_sliding(const RerankContext& ctx, const RankedList& list,
                          const Document& pivot, const WindowSpec& spec)
{
    spec.validate();
    Scheduler s(ctx, list, &pivot, "vs-sliding");
    auto ids = list.ids();
    const auto m = ids.size();
    const auto w = spec.w;
    const auto s_max = spec.max_stride();

    auto step = [&](std::size_t begin, std::size_t end, std::size_t stride) {
        auto ranked = s.rank(
            make_window(with_pivot(slice(ids, begin, end), pivot.id), begin + 1, end, stride, 0,
                        pivot.id));
        write_back(ids, begin, ranked, pivot.id);
        const auto it = std::find(ranked.begin(), ranked.end(), pivot.id);
        return static_cast<std::size_t>(it - ranked.begin());
    };

    if (m <= w) {
        step(0, m, s_max);
        return s.finish(ids);
    }
    std::size_t p = m;
    std::size_t stride = s_max;
    while (true) {
        const auto above = step(p - w, p, stride);
        stride = std::max<std::size_t>(1, std::min(s_max, w > above ? w - above : 0));
        p = p > stride ? p - stride : 0;
        if (p <= w) {
            step(0, w, stride);
            break;
        }
    }
    return s.finish(ids);
}

ScheduleResult td_part(const RerankContext& ctx, const RankedList& list, const WindowSpec& spec,
                       std::size_t anchor_k, std::size_t max_merge_depth)
{
    spec.validate();
    if (anchor_k < 1 || anchor_k > spec.w) {
        throw std::invalid_argument("anchor_k must lie in [1, w]");
    }
    Scheduler s(ctx, list, nullptr, "tdpart");
    const auto ids = list.ids();
    return s.finish(td_core(s, ids, {spec.w, anchor_k, max_merge_depth, {}}, 0));
}

ScheduleResult gptd_part(const RerankContext& ctx, const RankedList& list,
                         const Document& pivot, const PivotRank& pivot_rank,
                         const WindowSpec& spec, std::size_t anchor_k,
                         std::size_t max_merge_depth)
{
    spec.validate();
    if (anchor_k < 1 || anchor_k > spec.w) {
        throw std::invalid_argument("anchor_k must lie in [1, w]");
    }
    Scheduler s(ctx, list, &pivot, "gptd-part");
    const auto ids = list.ids();
    const auto m = ids.size();
    const auto w = spec.w;
    const auto top_end = std::min(w, m);

    const auto top = s.rank(
        make_window(with_pivot(slice(ids, 0, top_end), pivot.id), 1, top_end, 0, 0, pivot.id));
    const auto pivot_pos = static_cast<std::size_t>(
        std::find(top.begin(), top.end(), pivot.id) - top.begin());
    const std::vector<std::string> above(top.begin(),
                                         top.begin() + static_cast<std::ptrdiff_t>(pivot_pos));
    const std::vector<std::string> below(top.begin() + static_cast<std::ptrdiff_t>(pivot_pos) + 1,
                                         top.end());

    const auto deep_end = std::min(m, std::max(pivot_rank.position, w));
    std::vector<std::string> promoted;
    if (deep_end > w) {
        promoted = partition_deep(s, ids, w, deep_end, w, pivot.id, 0);
    }

    std::vector<std::string> head;
    if (promoted.empty()) {
        head = above;
    } else {
        std::vector<std::string> merge_list = above;
        merge_list.push_back(pivot.id);
        merge_list.insert(merge_list.end(), promoted.begin(), promoted.end());
        if (max_merge_depth < 1) {
            throw std::runtime_error("top-down merge exceeded depth 0");
        }
        head = td_core(s, merge_list, {w, anchor_k, max_merge_depth, pivot.id}, 1);
    }
    head.insert(head.end(), below.begin(), below.end());
    auto out = concat_unpromoted(std::move(head), ids, top_end, deep_end, promoted);
    out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(deep_end), ids.end());
    return s.finish(out);
}

std::string_view to_string(ListwiseMethod method)
{
    switch (method) {
        case ListwiseMethod::Sliding: return "sliding";
        case ListwiseMethod::Snow: return "snow";
        case ListwiseMethod::VsSliding: return "vs-sliding";
        case ListwiseMethod::TdPart: return "tdpart";
        case ListwiseMethod::GptdPart: return "gptd-part";
    }
    return "?";
}

ListwiseMethod listwise_method_from_string(std::string_view name)
{
    for (auto m : {ListwiseMethod::Sliding, ListwiseMethod::Snow, ListwiseMethod::VsSliding,
                   ListwiseMethod::TdPart, ListwiseMethod::GptdPart}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown listwise method: " + std::string(name));
}

bool uses_pivot(ListwiseMethod method)
{
    return method == ListwiseMethod::Snow || method == ListwiseMethod::VsSliding
           || method == ListwiseMethod::GptdPart;
}

namespace {

std::size_t vs_calls_with_constant_promotions(std::size_t m, const WindowSpec& spec,
                                              std::size_t above)
{
    if (m <= spec.w) {
        return 1;
    }
    std::size_t calls = 0;
    std::size_t p = m;
    const auto stride =
        std::max<std::size_t>(1, std::min(spec.max_stride(), spec.w > above ? spec.w - above : 0));
    while (true) {
        ++calls;
        p = p > stride ? p - stride : 0;
        if (p <= spec.w) {
            return calls + 1;
        }
    }
}

}  // namespace

CallPlan plan_listwise_calls(ListwiseMethod method, std::size_t m, const WindowSpec& spec,
                             std::optional<std::size_t> pivot_position)
{
    spec.validate();
    const auto w = spec.w;
    switch (method) {
        case ListwiseMethod::Sliding: {
            const auto n = m <= w ? 1 : ceil_div(m - w, spec.stride) + 1;
            return {n, n};
        }
        case ListwiseMethod::Snow: {
            const auto n = ceil_div(m, w) + 1;
            return {n, n};
        }
        case ListwiseMethod::VsSliding:
            return {vs_calls_with_constant_promotions(m, spec, 0),
                    vs_calls_with_constant_promotions(m, spec, w)};
        case ListwiseMethod::TdPart:
            return {m <= w ? 1 : 1 + ceil_div(m - w, w - 1), std::nullopt};
        case ListwiseMethod::GptdPart: {
            const auto deep_end = std::min(m, std::max(pivot_position.value_or(m), w));
            return {deep_end <= w ? 1 : 1 + ceil_div(deep_end - w, w - 1), std::nullopt};
        }
    }
    return {};
}

ScheduleTrace sliding_baseline_trace(std::size_t m, const WindowSpec& spec)
{
    ScheduleTrace t;
    t.method = "sliding";
    t.m = m;
    t.listwise_calls = plan_listwise_calls(ListwiseMethod::Sliding, m, spec).min;
    t.batches.assign(t.listwise_calls, 1);
    return t;
}

}  // namespace pivotrank
