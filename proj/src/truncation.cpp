#include "pivotrank/truncation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace pivotrank {

namespace {

TruncationDecision split_at(const RankedList& list, double threshold, TruncationMode mode)
{
    TruncationDecision d;
    d.mode = mode;
    d.threshold = threshold;
    for (const auto& e : list.entries()) {
        (e.score >= threshold ? d.d_plus_ids : d.d_minus_ids).push_back(e.doc_id);
    }
    d.cut_depth = d.d_plus_ids.size();
    return d;
}

std::vector<Document> fetch(const DocumentStore& docs, std::span<const std::string> ids)
{
    std::vector<Document> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        out.push_back(docs.get(id));
    }
    return out;
}

// Concatenate head and tail into a list with synthetic descending scores,
// carrying model scores from the head.
RankedList assemble(const std::string& query_id, const RankedList& head,
                    std::span<const std::string> tail)
{
    const auto n = static_cast<double>(head.size() + tail.size());
    std::vector<ScoredDoc> out;
    out.reserve(head.size() + tail.size());
    for (const auto& e : head.entries()) {
        out.push_back({e.doc_id, n - static_cast<double>(out.size()), {}, e.model_score});
    }
    for (const auto& id : tail) {
        out.push_back({id, n - static_cast<double>(out.size()), {}, {}});
    }
    return RankedList(query_id, std::move(out));
}

}  // namespace

std::string_view to_string(TruncationMode mode)
{
    switch (mode) {
        case TruncationMode::Dyn: return "dyn";
        case TruncationMode::Avg: return "avg";
        case TruncationMode::Fixed: return "fixed";
    }
    return "?";
}

TruncationMode truncation_mode_from_string(std::string_view name)
{
    if (name == "dyn") {
        return TruncationMode::Dyn;
    }
    if (name == "avg") {
        return TruncationMode::Avg;
    }
    if (name == "fixed") {
        return TruncationMode::Fixed;
    }
    throw std::invalid_argument("unknown truncation mode: " + std::string(name));
}

TruncationDecision partition_dyn(const RankedList& list, double pivot_score)
{
    return split_at(list, pivot_score, TruncationMode::Dyn);
}

TruncationDecision partition_avg(const RankedList& list, double theta_bar)
{
    return split_at(list, theta_bar, TruncationMode::Avg);
}

TruncationDecision partition_fixed(const RankedList& list, std::size_t k)
{
    TruncationDecision d;
    d.mode = TruncationMode::Fixed;
    d.threshold = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < list.size(); ++i) {
        (i < k ? d.d_plus_ids : d.d_minus_ids).push_back(list[i].doc_id);
    }
    d.cut_depth = d.d_plus_ids.size();
    return d;
}

void CalibrationStats::check_disjoint(std::span<const std::string> test_query_ids) const
{
    for (const auto& q : test_query_ids) {
        if (calibration_query_ids.contains(q)) {
            throw std::invalid_argument("query " + q + " is in both calibration and test sets");
        }
    }
}

void CalibrationStats::check_scorer(std::string_view id) const
{
    if (scorer_id != id) {
        throw std::invalid_argument("calibration stats were computed with scorer '" + scorer_id
                                    + "', not '" + std::string(id) + "'");
    }
}

std::string CalibrationStats::to_json() const
{
    nlohmann::json j{{"theta_bar", theta_bar},
                     {"scorer_id", scorer_id},
                     {"calibration_query_ids", calibration_query_ids},
                     {"per_query_scores", per_query_scores}};
    return j.dump(2);
}

CalibrationStats CalibrationStats::from_json(const std::string& text)
{
    try {
        auto j = nlohmann::json::parse(text);
        CalibrationStats s;
        s.theta_bar = j.at("theta_bar").get<double>();
        s.scorer_id = j.at("scorer_id").get<std::string>();
        s.calibration_query_ids = j.at("calibration_query_ids").get<std::set<std::string>>();
        s.per_query_scores = j.at("per_query_scores").get<std::map<std::string, double>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad calibration stats: ") + e.what());
    }
}

CalibrationStats calibrate_avg(std::span<const std::string> calibration_queries,
                               const std::map<std::string, double>& pivot_scores,
                               std::string scorer_id)
{
    if (calibration_queries.empty()) {
        throw std::invalid_argument("calibration set is empty");
    }
    CalibrationStats s;
    s.scorer_id = std::move(scorer_id);
    for (const auto& q : calibration_queries) {
        auto it = pivot_scores.find(q);
        if (it == pivot_scores.end()) {
            throw std::invalid_argument("no pivot score for calibration query " + q);
        }
        if (s.calibration_query_ids.insert(q).second) {
            s.per_query_scores.emplace(q, it->second);
        }
    }
    double sum = 0.0;
    for (const auto& [_, v] : s.per_query_scores) {
        sum += v;
    }
    s.theta_bar = sum / static_cast<double>(s.per_query_scores.size());
    return s;
}

TruncationReranker TruncationReranker::pointwise(const PointwiseBackend& backend)
{
    TruncationReranker r;
    r.pointwise_ = &backend;
    return r;
}

TruncationReranker TruncationReranker::pairwise(const PairwiseBackend& backend,
                                                PairwiseScheme scheme)
{
    TruncationReranker r;
    r.pairwise_ = &backend;
    r.scheme_ = scheme;
    return r;
}

RankedList TruncationReranker::rerank(const Query& query, std::span<const Document> docs,
                                      InferenceLedger& ledger) const
{
    if (pairwise_) {
        return pairwise_rerank(*pairwise_, query, docs, scheme_, ledger);
    }
    if (!pointwise_) {
        throw std::logic_error("truncation reranker has no backend");
    }
    std::vector<double> scores;
    scores.reserve(docs.size());
    for (const auto& d : docs) {
        scores.push_back(pointwise_score(*pointwise_, query, d, ledger));
    }
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<ScoredDoc> entries;
    entries.reserve(docs.size());
    for (auto i : order) {
        entries.push_back({docs[i].id, scores[i], {}, scores[i]});
    }
    return RankedList(query.id, std::move(entries));
}

RankedList psi_rank(const RankedList& list, const TruncationDecision& decision,
                    const Query& query, const DocumentStore& docs,
                    const TruncationReranker& reranker, InferenceLedger& ledger)
{
    const auto ids = list.ids();
    if (decision.d_plus_ids.size() + decision.d_minus_ids.size() != ids.size()
        || !std::equal(decision.d_plus_ids.begin(), decision.d_plus_ids.end(), ids.begin())
        || !std::equal(decision.d_minus_ids.begin(), decision.d_minus_ids.end(),
                       ids.begin() + static_cast<std::ptrdiff_t>(decision.d_plus_ids.size()))) {
        throw std::invalid_argument("truncation decision was not computed from this list");
    }
    if (decision.cut_depth == 0) {
        return list;
    }
    auto head = reranker.rerank(query, fetch(docs, decision.d_plus_ids), ledger);
    return assemble(list.query_id(), head, decision.d_minus_ids);
}

double stage_pivot_score(const PointwiseBackend& scorer, const Query& query, const Document& pivot,
                         InferenceLedger& ledger)
{
    const double s = scorer.score(query, pivot);
    ledger.record(query.id, CallKind::PivotScore);
    return s;
}

RankedList cascade(const RankedList& list, const Query& query, const DocumentStore& docs,
                   const Document& pivot, double first_stage_pivot_score,
                   std::span<const CascadeStage> stages, InferenceLedger& ledger,
                   std::vector<TruncationDecision>* decisions)
{
    if (stages.empty()) {
        throw std::invalid_argument("cascade needs at least one stage");
    }
    RankedList head = list;
    std::vector<std::vector<std::string>> tails;
    const TruncationReranker* prev = nullptr;

    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& stage = stages[i];
        try {
            double threshold = 0.0;
            if (stage.mode == TruncationMode::Avg) {
                if (!stage.avg_threshold) {
                    throw std::invalid_argument("Avg stage without a calibrated threshold");
                }
                threshold = *stage.avg_threshold;
            } else if (stage.mode == TruncationMode::Dyn) {
                if (i == 0) {
                    threshold = first_stage_pivot_score;
                } else if (!head.empty()) {
                    threshold = stage_pivot_score(*prev->pointwise_backend(), query, pivot, ledger);
                }
            } else {
                throw std::invalid_argument("cascade stages must be Dyn or Avg");
            }
            auto decision = partition_dyn(head, threshold);
            decision.mode = stage.mode;
            if (decision.cut_depth > 0) {
                auto reranked = stage.reranker.rerank(query, fetch(docs, decision.d_plus_ids),
                                                      ledger);
                if (i + 1 < stages.size() && !stage.reranker.pointwise_backend()) {
                    throw std::invalid_argument(
                        "only a pointwise stage can feed scores to the next stage");
                }
                std::vector<ScoredDoc> scored;
                for (const auto& e : reranked.entries()) {
                    scored.push_back({e.doc_id, e.model_score.value_or(e.score), {}, e.model_score});
                }
                head = RankedList(query.id, std::move(scored));
            } else {
                head = RankedList(query.id, {});
            }
            tails.push_back(decision.d_minus_ids);
            if (decisions) {
                decisions->push_back(std::move(decision));
            }
            prev = &stage.reranker;
        } catch (const std::exception& e) {
            throw std::runtime_error("cascade stage " + std::to_string(i + 1) + ": " + e.what());
        }
    }

    std::vector<std::string> tail;
    for (auto it = tails.rbegin(); it != tails.rend(); ++it) {
        tail.insert(tail.end(), it->begin(), it->end());
    }
    return assemble(list.query_id(), head, tail);
}

}  // namespace pivotrank
