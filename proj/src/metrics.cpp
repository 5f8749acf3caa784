#include "pivotrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pivotrank {

namespace {

double gain_of(int grade, Gain gain)
{
    if (grade <= 0) {
        return 0.0;
    }
    return gain == Gain::Exponential ? std::exp2(grade) - 1.0 : static_cast<double>(grade);
}

double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

bool lower_is_better(std::string_view column) { return column == "IPQ"; }

}  // namespace

Gain gain_from_string(std::string_view name)
{
    if (name == "exponential") {
        return Gain::Exponential;
    }
    if (name == "linear") {
        return Gain::Linear;
    }
    throw std::invalid_argument("unknown gain: " + std::string(name));
}

std::string_view to_string(Gain gain)
{
    return gain == Gain::Exponential ? "exponential" : "linear";
}

double ndcg_at_k(const RankedList& run, const Qrels& qrels, std::size_t k, Gain gain)
{
    if (k == 0) {
        throw std::invalid_argument("nDCG cutoff must be >= 1");
    }
    std::vector<int> ideal;
    for (const auto& [_, g] : qrels.for_query(run.query_id())) {
        ideal.push_back(g.value());
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
        idcg += gain_of(ideal[i], gain) * discount(i + 1);
    }
    if (idcg == 0.0) {
        return 0.0;
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, run.size()); ++i) {
        dcg += gain_of(qrels.grade(run.query_id(), run[i].doc_id), gain) * discount(i + 1);
    }
    return dcg / idcg;
}

double ap_at_k(const RankedList& run, const Qrels& qrels, std::size_t k, int threshold)
{
    if (threshold < 0 || threshold > 3) {
        throw std::invalid_argument("relevance threshold must lie in [0, 3]");
    }
    std::size_t total_relevant = 0;
    for (const auto& [_, g] : qrels.for_query(run.query_id())) {
        total_relevant += g.value() >= threshold ? 1 : 0;
    }
    if (total_relevant == 0) {
        return 0.0;
    }
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < std::min(k, run.size()); ++i) {
        const auto& id = run[i].doc_id;
        if (qrels.judged(run.query_id(), id) && qrels.grade(run.query_id(), id) >= threshold) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(total_relevant);
}

double ipq(const InferenceLedger& ledger, std::span<const std::string> query_ids,
           std::span<const CallKind> kinds)
{
    if (query_ids.empty()) {
        throw std::invalid_argument("IPQ over an empty query set");
    }
    double total = 0.0;
    for (const auto& q : query_ids) {
        for (auto kind : kinds) {
            total += static_cast<double>(ledger.count(q, kind));
        }
    }
    return total / static_cast<double>(query_ids.size());
}

double ipq(const InferenceLedger& ledger, std::span<const std::string> query_ids)
{
    return ipq(ledger, query_ids, kRerankKinds);
}

double CostModel::weight(CallKind kind) const
{
    auto it = weights.find(kind);
    return it == weights.end() ? 1.0 : it->second;
}

void CostModel::validate() const
{
    if (parallelism < 1) {
        throw std::invalid_argument("parallelism must be >= 1");
    }
    for (const auto& [kind, w] : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw std::invalid_argument("cost weight for " + std::string(to_string(kind))
                                        + " must be positive");
        }
    }
}

double modeled_time(const ScheduleTrace& trace, const CostModel& cost, double pivot_cost)
{
    cost.validate();
    double t = 0.0;
    for (auto calls : trace.batches) {
        t += static_cast<double>((calls + cost.parallelism - 1) / cost.parallelism)
             * cost.weight(CallKind::Listwise);
    }
    return t + pivot_cost;
}

double speedup(const ScheduleTrace& method, const ScheduleTrace& baseline, const CostModel& cost,
               double pivot_cost)
{
    const double tm = modeled_time(method, cost, pivot_cost);
    if (tm <= 0.0) {
        throw std::invalid_argument("speed-up undefined: method time is zero");
    }
    return modeled_time(baseline, cost) / tm;
}

void MetricConfig::validate() const
{
    if (ndcg_k.empty()) {
        throw std::invalid_argument("at least one nDCG cutoff is required");
    }
    for (auto k : ndcg_k) {
        if (k < 1) {
            throw std::invalid_argument("nDCG cutoff must be >= 1");
        }
    }
    if (map_k < 1) {
        throw std::invalid_argument("MAP cutoff must be >= 1");
    }
    if (threshold < 0 || threshold > 3) {
        throw std::invalid_argument("relevance threshold must lie in [0, 3]");
    }
}

std::optional<double> MetricReport::aggregate(std::string_view name) const
{
    for (const auto& [n, v] : aggregates) {
        if (n == name) {
            return v;
        }
    }
    return std::nullopt;
}

void MetricReport::set_aggregate(const std::string& name, double value)
{
    for (auto& [n, v] : aggregates) {
        if (n == name) {
            v = value;
            return;
        }
    }
    aggregates.emplace_back(name, value);
}

std::string MetricReport::to_json() const
{
    nlohmann::ordered_json j;
    j["label"] = label;
    nlohmann::ordered_json cfg;
    cfg["ndcg_k"] = config.ndcg_k;
    cfg["map_k"] = config.map_k;
    cfg["threshold"] = config.threshold;
    cfg["gain"] = std::string(to_string(config.gain));
    nlohmann::ordered_json weights = nlohmann::ordered_json::object();
    for (const auto& [kind, w] : cost_weights) {
        weights[std::string(to_string(kind))] = w;
    }
    cfg["cost_weights"] = weights;
    cfg["parallelism"] = parallelism;
    j["config"] = cfg;
    nlohmann::ordered_json agg = nlohmann::ordered_json::object();
    for (const auto& [n, v] : aggregates) {
        agg[n] = v;
    }
    j["aggregates"] = agg;
    j["queries_evaluated"] = queries_evaluated;
    j["queries_without_qrels"] = queries_without_qrels;
    nlohmann::ordered_json pq = nlohmann::ordered_json::object();
    for (const auto& [q, m] : per_query) {
        pq[q] = m;
    }
    j["per_query"] = pq;
    return j.dump(2) + "\n";
}

MetricReport MetricReport::from_json(const std::string& text)
{
    try {
        auto j = nlohmann::ordered_json::parse(text);
        MetricReport r;
        r.label = j.at("label").get<std::string>();
        const auto& cfg = j.at("config");
        r.config.ndcg_k = cfg.at("ndcg_k").get<std::vector<std::size_t>>();
        r.config.map_k = cfg.at("map_k").get<std::size_t>();
        r.config.threshold = cfg.at("threshold").get<int>();
        r.config.gain = gain_from_string(cfg.at("gain").get<std::string>());
        for (const auto& [k, v] : cfg.at("cost_weights").items()) {
            r.cost_weights[call_kind_from_string(k)] = v.get<double>();
        }
        r.parallelism = cfg.at("parallelism").get<std::size_t>();
        for (const auto& [k, v] : j.at("aggregates").items()) {
            r.aggregates.emplace_back(k, v.get<double>());
        }
        r.queries_evaluated = j.at("queries_evaluated").get<std::size_t>();
        r.queries_without_qrels = j.at("queries_without_qrels").get<std::size_t>();
        for (const auto& [q, m] : j.at("per_query").items()) {
            r.per_query[q] = m.get<std::map<std::string, double>>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad metric report: ") + e.what());
    }
}

std::string ndcg_name(std::size_t k) { return "nDCG@" + std::to_string(k); }
std::string map_name(std::size_t k) { return "MAP@" + std::to_string(k); }

MetricReport evaluate_run(const Run& run, const Qrels& qrels, const MetricConfig& config,
                          std::string label)
{
    config.validate();
    MetricReport r;
    r.label = std::move(label);
    r.config = config;
    std::map<std::string, double> sums;
    for (const auto& [qid, list] : run) {
        if (!qrels.has_query(qid)) {
            ++r.queries_without_qrels;
            continue;
        }
        auto& row = r.per_query[qid];
        for (auto k : config.ndcg_k) {
            const double v = ndcg_at_k(list, qrels, k, config.gain);
            row["ndcg@" + std::to_string(k)] = v;
            sums[ndcg_name(k)] += v;
        }
        const double ap = ap_at_k(list, qrels, config.map_k, config.threshold);
        row["ap@" + std::to_string(config.map_k)] = ap;
        sums[map_name(config.map_k)] += ap;
        ++r.queries_evaluated;
    }
    const double n = r.queries_evaluated == 0 ? 1.0 : static_cast<double>(r.queries_evaluated);
    r.aggregates.emplace_back(map_name(config.map_k), sums[map_name(config.map_k)] / n);
    for (auto k : config.ndcg_k) {
        r.aggregates.emplace_back(ndcg_name(k), sums[ndcg_name(k)] / n);
    }
    return r;
}

std::string compare_reports(std::span<const MetricReport> reports)
{
    if (reports.empty()) {
        throw std::invalid_argument("nothing to compare");
    }
    const auto& first = reports.front();
    std::set<std::string> queries;
    for (const auto& [q, _] : first.per_query) {
        queries.insert(q);
    }
    std::vector<std::string> columns;
    for (const auto& r : reports) {
        std::set<std::string> qs;
        for (const auto& [q, _] : r.per_query) {
            qs.insert(q);
        }
        if (qs != queries) {
            throw std::invalid_argument("report '" + r.label + "' covers a different query set than '"
                                        + first.label + "'");
        }
        if (r.config.ndcg_k != first.config.ndcg_k || r.config.map_k != first.config.map_k
            || r.config.threshold != first.config.threshold || r.config.gain != first.config.gain) {
            throw std::invalid_argument("report '" + r.label
                                        + "' uses a different metric configuration");
        }
        for (const auto& [n, _] : r.aggregates) {
            if (std::find(columns.begin(), columns.end(), n) == columns.end()) {
                columns.push_back(n);
            }
        }
    }

    // cells[row][col]
    std::vector<std::vector<std::string>> cells(reports.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const bool lower = lower_is_better(columns[c]);
        std::vector<double> distinct;
        for (const auto& r : reports) {
            if (auto v = r.aggregate(columns[c])) {
                distinct.push_back(*v);
            }
        }
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (!lower) {
            std::reverse(distinct.begin(), distinct.end());
        }
        const char* f = (columns[c] == "IPQ" || columns[c] == "SU") ? "%.2f" : "%.4f";
        for (std::size_t i = 0; i < reports.size(); ++i) {
            auto v = reports[i].aggregate(columns[c]);
            if (!v) {
                cells[i].push_back("-");
                continue;
            }
            std::string s = fmt(f, *v);
            if (reports.size() > 1 && *v == distinct[0]) {
                s += "*";
            } else if (reports.size() > 1 && distinct.size() > 1 && *v == distinct[1]) {
                s += "_";
            }
            cells[i].push_back(s);
        }
    }

    std::vector<std::size_t> width(columns.size() + 1, 0);
    width[0] = 6;
    for (const auto& r : reports) {
        width[0] = std::max(width[0], r.label.size());
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
        width[c + 1] = columns[c].size();
        for (const auto& row : cells) {
            width[c + 1] = std::max(width[c + 1], row[c].size());
        }
    }
    std::ostringstream out;
    auto pad = [&](const std::string& s, std::size_t w, bool left) {
        const std::string fill(w - s.size(), ' ');
        out << (left ? s + fill : fill + s);
    };
    pad("method", width[0], true);
    for (std::size_t c = 0; c < columns.size(); ++c) {
        out << "  ";
        pad(columns[c], width[c + 1], false);
    }
    out << "\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        pad(reports[i].label, width[0], true);
        for (std::size_t c = 0; c < columns.size(); ++c) {
            out << "  ";
            pad(cells[i][c], width[c + 1], false);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace pivotrank
