#include "pivotrank/rerankers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pivotrank/rng.hpp"

namespace pivotrank {

namespace {

constexpr std::array<std::string_view, kNumCallKinds> kKindNames{
    "pointwise", "pairwise", "listwise", "pivot_gen", "judge", "pivot_score"};

std::size_t kind_index(CallKind k) { return static_cast<std::size_t>(k); }

std::string replace_all(std::string s, std::string_view from, const std::string& to)
{
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

std::string truncate_words(const std::string& text, std::size_t max_words)
{
    std::string out;
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
        if (!space && !in_word) {
            if (words == max_words) {
                break;
            }
            ++words;
        }
        in_word = !space;
        out.push_back(c);
    }
    while (!out.empty() && (out.back() == ' ' || out.back() == '\n')) {
        out.pop_back();
    }
    return out;
}

}  // namespace

std::string_view to_string(CallKind kind) { return kKindNames[kind_index(kind)]; }

CallKind call_kind_from_string(std::string_view name)
{
    for (std::size_t i = 0; i < kNumCallKinds; ++i) {
        if (kKindNames[i] == name) {
            return kAllCallKinds[i];
        }
    }
    throw std::invalid_argument("unknown call kind: " + std::string(name));
}

void InferenceLedger::record(const std::string& query_id, CallKind kind, std::uint64_t n)
{
    std::lock_guard lock(mu_);
    auto [it, _] = counts_.try_emplace(query_id, Counts{});
    it->second[kind_index(kind)] += n;
}

std::uint64_t InferenceLedger::count(const std::string& query_id, CallKind kind) const
{
    std::lock_guard lock(mu_);
    auto it = counts_.find(query_id);
    return it == counts_.end() ? 0 : it->second[kind_index(kind)];
}

std::uint64_t InferenceLedger::total(CallKind kind) const
{
    std::lock_guard lock(mu_);
    std::uint64_t sum = 0;
    for (const auto& [_, c] : counts_) {
        sum += c[kind_index(kind)];
    }
    return sum;
}

std::map<std::string, InferenceLedger::Counts> InferenceLedger::snapshot() const
{
    std::lock_guard lock(mu_);
    return counts_;
}

double InferenceLedger::modeled_cost(const std::string& query_id) const
{
    std::lock_guard lock(mu_);
    auto it = counts_.find(query_id);
    if (it == counts_.end()) {
        return 0.0;
    }
    double cost = 0.0;
    for (auto kind : kAllCallKinds) {
        auto w = cost_units_.find(kind);
        cost += static_cast<double>(it->second[kind_index(kind)])
                * (w == cost_units_.end() ? 1.0 : w->second);
    }
    return cost;
}

ListwisePermutation ListwisePermutation::checked(std::vector<std::size_t> order,
                                                 std::size_t length)
{
    if (order.size() != length) {
        throw InvariantError("permutation has " + std::to_string(order.size())
                             + " entries for a window of " + std::to_string(length));
    }
    std::vector<bool> seen(length, false);
    for (auto i : order) {
        if (i >= length || seen[i]) {
            throw InvariantError("not a permutation of the window indices");
        }
        seen[i] = true;
    }
    return {std::move(order)};
}

double pointwise_score(const PointwiseBackend& backend, const Query& query, const Document& doc,
                       InferenceLedger& ledger)
{
    const double s = backend.score(query, doc);
    ledger.record(query.id, CallKind::Pointwise);
    if (!std::isfinite(s)) {
        throw InvariantError("pointwise backend returned a non-finite score for " + doc.id);
    }
    return s;
}

const Document& pairwise_prefer(const PairwiseBackend& backend, const Query& query,
                                const Document& a, const Document& b, InferenceLedger& ledger)
{
    if (a.id == b.id) {
        throw std::invalid_argument("pairwise comparison of a document with itself: " + a.id);
    }
    const bool first = backend.prefers_first(query, a, b);
    ledger.record(query.id, CallKind::Pairwise);
    return first ? a : b;
}

PairwiseScheme pairwise_scheme_from_string(std::string_view name)
{
    if (name == "all-pairs") {
        return PairwiseScheme::AllPairs;
    }
    if (name == "single-pass") {
        return PairwiseScheme::SinglePass;
    }
    throw std::invalid_argument("unknown pairwise scheme: " + std::string(name));
}

RankedList pairwise_rerank(const PairwiseBackend& backend, const Query& query,
                           std::span<const Document> docs, PairwiseScheme scheme,
                           InferenceLedger& ledger)
{
    if (docs.empty()) {
        throw std::invalid_argument("pairwise_rerank needs at least one document");
    }
    const std::size_t n = docs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> wins(n, 0.0);

    if (scheme == PairwiseScheme::AllPairs) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const auto& w = pairwise_prefer(backend, query, docs[i], docs[j], ledger);
                wins[&w == &docs[i] ? i : j] += 1.0;
            }
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return wins[x] > wins[y]; });
    } else {
        for (std::size_t i = n; i-- > 1;) {
            const auto& upper = docs[order[i - 1]];
            const auto& lower = docs[order[i]];
            if (&pairwise_prefer(backend, query, upper, lower, ledger) == &lower) {
                std::swap(order[i - 1], order[i]);
            }
        }
    }

    std::vector<ScoredDoc> entries;
    entries.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        ScoredDoc e{docs[order[r]].id, static_cast<double>(n - r), {}, {}};
        if (scheme == PairwiseScheme::AllPairs) {
            e.model_score = wins[order[r]];
        }
        entries.push_back(std::move(e));
    }
    return RankedList(query.id, std::move(entries));
}

ListwisePermutation listwise_rank(const ListwiseBackend& backend, const Query& query,
                                  std::span<const Document> window, InferenceLedger& ledger)
{
    if (window.empty()) {
        throw std::invalid_argument("listwise window is empty");
    }
    auto order = backend.rank(query, window);
    ledger.record(query.id, CallKind::Listwise);
    return ListwisePermutation::checked(std::move(order), window.size());
}

std::string pivot_doc_id(const std::string& query_id)
{
    return std::string(kPivotIdPrefix) + query_id;
}

bool is_pivot_id(std::string_view doc_id) { return doc_id.starts_with(kPivotIdPrefix); }

OracleJudgments::OracleJudgments(Qrels qrels, const Run& first_stage, double pivot_utility)
    : qrels_(std::move(qrels)), pivot_utility_(pivot_utility)
{
    if (!(pivot_utility > 1.5 && pivot_utility < 2.0)) {
        throw std::invalid_argument("oracle pivot utility must lie in (1.5, 2)");
    }
    for (const auto& [qid, list] : first_stage) {
        auto& ranks = ranks_[qid];
        for (std::size_t i = 0; i < list.size(); ++i) {
            ranks.emplace(list[i].doc_id, i + 1);
        }
    }
}

double OracleJudgments::utility(const std::string& query_id, const std::string& doc_id) const
{
    if (is_pivot_id(doc_id)) {
        return pivot_utility_;
    }
    return static_cast<double>(qrels_.grade(query_id, doc_id));
}

std::size_t OracleJudgments::first_stage_rank(const std::string& query_id,
                                              const std::string& doc_id) const
{
    auto q = ranks_.find(query_id);
    if (q == ranks_.end()) {
        return kUnranked;
    }
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? kUnranked : d->second;
}

bool OracleJudgments::before(const std::string& query_id, const std::string& a,
                             const std::string& b) const
{
    const double ua = utility(query_id, a);
    const double ub = utility(query_id, b);
    if (ua != ub) {
        return ua > ub;
    }
    const auto ra = first_stage_rank(query_id, a);
    const auto rb = first_stage_rank(query_id, b);
    if (ra != rb) {
        return ra < rb;
    }
    return a < b;
}

double OracleJudgments::score(const std::string& query_id, const std::string& doc_id) const
{
    const auto r = first_stage_rank(query_id, doc_id);
    const double rank_term = r == kUnranked ? 0.0 : 1.0 / (1.0 + static_cast<double>(r));
    return utility(query_id, doc_id) + rank_term;
}

void NoiseModel::validate() const
{
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw std::invalid_argument("noise epsilon must lie in [0,1]");
    }
    if (passes_per_item < 1) {
        throw std::invalid_argument("noise passes_per_item must be >= 1");
    }
}

OracleReranker::OracleReranker(std::shared_ptr<const OracleJudgments> truth, NoiseModel noise)
    : truth_(std::move(truth)), noise_(noise)
{
    if (!truth_) {
        throw std::invalid_argument("oracle reranker needs judgments");
    }
    noise_.validate();
}

double OracleReranker::score(const Query& query, const Document& doc) const
{
    double s = truth_->score(query.id, doc.id);
    if (noise_.epsilon > 0.0) {
        Rng rng(StableHash().add(noise_.seed).add("pt").add(query.id).add(doc.id).value());
        s += noise_.epsilon * (2.0 * rng.uniform() - 1.0);
    }
    return s;
}

bool OracleReranker::prefers_first(const Query& query, const Document& a,
                                   const Document& b) const
{
    bool first = truth_->before(query.id, a.id, b.id);
    if (noise_.epsilon > 0.0) {
        Rng rng(StableHash().add(noise_.seed).add("pr").add(query.id).add(a.id).add(b.id).value());
        if (rng.uniform() < noise_.epsilon) {
            first = !first;
        }
    }
    return first;
}

std::vector<std::size_t> OracleReranker::rank(const Query& query,
                                              std::span<const Document> window) const
{
    std::vector<std::size_t> order(window.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return truth_->before(query.id, window[x].id, window[y].id);
    });
    if (noise_.epsilon > 0.0 && order.size() > 1) {
        StableHash h;
        h.add(noise_.seed).add("ls").add(query.id);
        for (const auto& d : window) {
            h.add(d.id);
        }
        Rng rng(h.value());
        const std::size_t passes = static_cast<std::size_t>(noise_.passes_per_item) * order.size();
        for (std::size_t p = 0; p < passes; ++p) {
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                if (rng.uniform() < noise_.epsilon) {
                    std::swap(order[i], order[i + 1]);
                }
            }
        }
    }
    return order;
}

std::vector<std::size_t> parse_bracket_ids(std::string_view text, std::size_t length)
{
    std::vector<std::size_t> ids;
    std::size_t i = 0;
    while ((i = text.find('[', i)) != std::string_view::npos) {
        std::size_t j = i + 1;
        std::size_t value = 0;
        bool digits = false;
        while (j < text.size() && text[j] >= '0' && text[j] <= '9' && value < 1'000'000) {
            value = value * 10 + static_cast<std::size_t>(text[j] - '0');
            digits = true;
            ++j;
        }
        if (digits && j < text.size() && text[j] == ']' && value >= 1 && value <= length) {
            ids.push_back(value - 1);
        }
        i = j;
    }
    return ids;
}

std::vector<std::size_t> repair_permutation(std::span<const std::size_t> ids, std::size_t length)
{
    std::vector<bool> seen(length, false);
    std::vector<std::size_t> out;
    out.reserve(length);
    for (auto id : ids) {
        if (id < length && !seen[id]) {
            seen[id] = true;
            out.push_back(id);
        }
    }
    for (std::size_t i = 0; i < length; ++i) {
        if (!seen[i]) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<ChatMessage> render_listwise_messages(const ListwisePrompt& prompt, const Query& query,
                                                  std::span<const Document> window)
{
    const auto num = std::to_string(window.size());
    auto fill = [&](const std::string& tmpl) {
        return replace_all(replace_all(tmpl, "{num}", num), "{query}", query.text);
    };
    std::vector<ChatMessage> msgs;
    msgs.push_back({"system", prompt.system});
    msgs.push_back({"user", fill(prompt.preamble)});
    msgs.push_back({"assistant", "Okay, please provide the passages."});
    for (std::size_t i = 0; i < window.size(); ++i) {
        const auto tag = "[" + std::to_string(i + 1) + "]";
        msgs.push_back({"user", tag + " " + truncate_words(window[i].text, prompt.max_passage_words)});
        msgs.push_back({"assistant", "Received passage " + tag + "."});
    }
    msgs.push_back({"user", fill(prompt.instruction)});
    return msgs;
}

HttpListwiseBackend::HttpListwiseBackend(ChatConfig cfg, ListwisePrompt prompt, int parse_retries)
    : client_(std::move(cfg)), prompt_(std::move(prompt)), parse_retries_(parse_retries)
{}

std::vector<std::size_t> HttpListwiseBackend::rank(const Query& query,
                                                   std::span<const Document> window) const
{
    const auto msgs = render_listwise_messages(prompt_, query, window);
    std::string last;
    for (int attempt = 0; attempt <= parse_retries_; ++attempt) {
        last = client_.complete(msgs);
        auto ids = parse_bracket_ids(last, window.size());
        if (!ids.empty()) {
            return repair_permutation(ids, window.size());
        }
    }
    throw InvariantError("listwise output has no usable identifiers: " + last.substr(0, 200));
}

}  // namespace pivotrank
