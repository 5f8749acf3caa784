#include "pivotrank/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pivotrank/parallel.hpp"
#include "pivotrank/rng.hpp"
#include "pivotrank/trec_io.hpp"

namespace pivotrank {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

template <typename F>
auto in_stage(const std::string& name, F&& f)
{
    try {
        return f();
    } catch (const std::exception& e) {
        throw std::runtime_error(name + ": " + e.what());
    }
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& section)
{
    if (!j.is_object()) {
        throw std::invalid_argument("config section '" + section + "' must be an object");
    }
    for (const auto& [k, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw std::invalid_argument("unknown config key '" + section + "." + k + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

std::string resolve(const std::string& base, const std::string& p)
{
    if (p.empty() || fs::path(p).is_absolute()) {
        return p;
    }
    return (fs::path(base) / p).lexically_normal().string();
}

ChatConfig parse_chat(const json& j, const std::string& section)
{
    check_keys(j,
               {"url", "model", "api_key_env", "max_tokens", "temperature", "top_p", "seed",
                "max_retries", "timeout_ms", "backoff_ms"},
               section);
    ChatConfig c;
    read(j, "url", c.url);
    read(j, "model", c.model);
    read(j, "api_key_env", c.api_key_env);
    read(j, "max_tokens", c.max_tokens);
    read(j, "temperature", c.temperature);
    read(j, "top_p", c.top_p);
    if (j.contains("seed")) {
        c.seed = j.at("seed").get<std::int64_t>();
    }
    read(j, "max_retries", c.max_retries);
    if (j.contains("timeout_ms")) {
        c.timeout = std::chrono::milliseconds(j.at("timeout_ms").get<std::int64_t>());
    }
    if (j.contains("backoff_ms")) {
        c.backoff = std::chrono::milliseconds(j.at("backoff_ms").get<std::int64_t>());
    }
    return c;
}

StageConfig parse_stage(const json& j, const std::string& section)
{
    check_keys(j, {"mode", "reranker", "pairwise_scheme"}, section);
    StageConfig s;
    if (j.contains("mode")) {
        s.mode = truncation_mode_from_string(j.at("mode").get<std::string>());
    }
    if (j.contains("reranker")) {
        const auto r = j.at("reranker").get<std::string>();
        if (r == "pointwise") {
            s.reranker = StageReranker::Pointwise;
        } else if (r == "pairwise") {
            s.reranker = StageReranker::Pairwise;
        } else {
            throw std::invalid_argument("unknown reranker '" + r + "' in " + section);
        }
    }
    if (j.contains("pairwise_scheme")) {
        s.scheme = pairwise_scheme_from_string(j.at("pairwise_scheme").get<std::string>());
    }
    return s;
}

// ---------------------------------------------------------------- inputs

struct Inputs {
    std::vector<Document> corpus;
    DocumentStore store;
    std::vector<Query> queries;  // sorted by id
    Qrels qrels;
    Run first_stage;
    std::map<std::string, double> pivot_scores;  // from file or synth
    std::optional<Bm25Index> index;
    double avgdl = 0.0;
    std::vector<std::string> calibration_ids;
    std::vector<std::string> test_ids;
};

std::string score_source(const ExperimentConfig& c)
{
    if (!c.pivot_score_source.empty()) {
        return c.pivot_score_source;
    }
    return (!c.pivot_scores_path.empty() || (c.synth && !c.first_stage_bm25)) ? "file" : "text";
}

Inputs load_inputs(const ExperimentConfig& c)
{
    Inputs in;
    Run file_run;
    if (c.synth) {
        auto data = generate_synth(*c.synth);
        in.corpus = std::move(data.corpus);
        in.queries = std::move(data.queries);
        in.qrels = std::move(data.qrels);
        file_run = std::move(data.run);
        in.pivot_scores = std::move(data.pivot_scores);
    } else {
        for (const auto& [key, p] : {std::pair{"data.corpus", &c.corpus_path},
                                     std::pair{"data.queries", &c.queries_path},
                                     std::pair{"data.qrels", &c.qrels_path},
                                     std::pair{"data.run", &c.run_path},
                                     std::pair{"data.pivot_scores", &c.pivot_scores_path}}) {
            if (!p->empty() && !fs::exists(*p)) {
                throw std::invalid_argument(std::string(key) + ": no such file: " + *p);
            }
        }
        in.corpus = load_documents(c.corpus_path);
        in.queries = load_queries(c.queries_path);
        in.qrels = load_qrels(c.qrels_path);
        if (!c.first_stage_bm25) {
            file_run = load_trec_run(c.run_path);
        }
        if (!c.pivot_scores_path.empty()) {
            in.pivot_scores = load_pivot_scores(c.pivot_scores_path);
        }
    }
    std::sort(in.queries.begin(), in.queries.end(),
              [](const Query& a, const Query& b) { return a.id < b.id; });
    in.store = DocumentStore(in.corpus);

    const bool needs_text_scores =
        policy_needs_pivot(c.policy) && score_source(c) == "text";
    if (c.first_stage_bm25 || needs_text_scores) {
        in.index = Bm25Index::build(in.corpus, c.bm25);
        in.avgdl = in.index->avgdl();
    } else {
        std::size_t total = 0;
        for (const auto& d : in.corpus) {
            total += tokenize(d.text).size();
        }
        in.avgdl = in.corpus.empty() ? 0.0
                                     : static_cast<double>(total)
                                           / static_cast<double>(in.corpus.size());
    }

    for (const auto& q : in.queries) {
        if (c.first_stage_bm25) {
            in.first_stage.emplace(q.id, in.index->retrieve(q, c.depth));
            continue;
        }
        auto it = file_run.find(q.id);
        if (it == file_run.end()) {
            throw std::invalid_argument("query " + q.id + " has no entries in the run file");
        }
        auto entries = it->second.entries();
        std::vector<ScoredDoc> cut(entries.begin(),
                                   entries.begin()
                                       + static_cast<std::ptrdiff_t>(
                                           std::min(c.depth, entries.size())));
        for (std::size_t i = 0; i < cut.size(); ++i) {
            cut[i].source_rank = i + 1;
        }
        in.first_stage.emplace(q.id, RankedList(q.id, std::move(cut)));
    }

    if (policy_needs_pivot(c.policy) && score_source(c) == "file") {
        for (const auto& q : in.queries) {
            if (!in.pivot_scores.contains(q.id)) {
                throw std::invalid_argument("no first-stage pivot score for query " + q.id);
            }
        }
    }

    // Calibration split.
    std::set<std::string> known;
    for (const auto& q : in.queries) {
        known.insert(q.id);
    }
    std::set<std::string> calib;
    for (const auto& id : c.calibration_queries) {
        if (!known.contains(id)) {
            throw std::invalid_argument("calibration query " + id + " is not in the query set");
        }
        calib.insert(id);
    }
    if (calib.empty() && c.calibration_fraction > 0.0) {
        std::vector<std::string> ids(known.begin(), known.end());
        Rng rng(StableHash().add(c.seed).add("calibration").value());
        rng.shuffle(ids);
        const auto n = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::llround(c.calibration_fraction * static_cast<double>(ids.size()))));
        calib.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    }
    for (const auto& q : in.queries) {
        (calib.contains(q.id) ? in.calibration_ids : in.test_ids).push_back(q.id);
    }
    if (in.test_ids.empty()) {
        throw std::invalid_argument("no test queries left after the calibration split");
    }
    return in;
}

// -------------------------------------------------------------- backends

struct Backends {
    std::shared_ptr<const OracleJudgments> truth;
    std::unique_ptr<OracleReranker> oracle;
    std::unique_ptr<HttpListwiseBackend> http_listwise;
    std::unique_ptr<PivotGenerator> generator;
    std::unique_ptr<Judge> judge;
    PivotCache cache;

    const ListwiseBackend& listwise() const
    {
        if (http_listwise) {
            return *http_listwise;
        }
        return *oracle;
    }
};

std::unique_ptr<Backends> make_backends(const ExperimentConfig& c, const Inputs& in)
{
    auto b = std::make_unique<Backends>();
    b->truth = std::make_shared<OracleJudgments>(in.qrels, in.first_stage, c.pivot_utility);
    b->oracle = std::make_unique<OracleReranker>(b->truth, c.noise);
    if (c.backend == "http") {
        b->http_listwise = std::make_unique<HttpListwiseBackend>(c.backend_chat, c.listwise_prompt,
                                                                 c.listwise_parse_retries);
    }
    if (policy_needs_pivot(c.policy)) {
        if (c.pivot_generator == "http") {
            b->generator = std::make_unique<HttpPivotGenerator>(c.pivot_chat);
        } else {
            b->generator = std::make_unique<OracleGenerator>(in.corpus, in.qrels, c.seed);
        }
        if (c.pivot_judge == "http") {
            b->judge = std::make_unique<HttpJudge>(c.pivot_chat);
        } else if (c.pivot_judge == "oracle") {
            b->judge = std::make_unique<OracleJudge>();
        }
        if (!c.pivot_cache_path.empty() && fs::exists(c.pivot_cache_path)) {
            b->cache.load(c.pivot_cache_path);
        }
    }
    return b;
}

LengthBounds effective_bounds(const ExperimentConfig& c, const Inputs& in)
{
    auto bounds = c.length;
    if (bounds.max_tokens == 0) {
        bounds.max_tokens = default_max_tokens(in.avgdl);
    }
    return bounds;
}

PivotDocument obtain_pivot(const ExperimentConfig& c, const Inputs& in, Backends& b,
                           const Query& q, InferenceLedger& ledger)
{
    const RelevanceGrade tau(c.tau);
    const auto bounds = effective_bounds(c, in);
    return b.cache.get_or_generate(q.id, tau, b.generator->id(), [&] {
        if (!b.judge) {
            return generate_pivot(*b.generator, q, tau, bounds, ledger);
        }
        return generate_verified_pivot(*b.generator, *b.judge, q, tau, bounds, c.max_attempts,
                                       ledger);
    });
}

double first_stage_pivot_score(const ExperimentConfig& c, const Inputs& in, const Query& q,
                               const PivotDocument& pivot)
{
    if (score_source(c) == "file") {
        return in.pivot_scores.at(q.id);
    }
    return in.index->score_text(q, pivot.text);
}

std::string first_stage_scorer_id(const ExperimentConfig& c)
{
    if (score_source(c) == "file") {
        return "file:" + (c.synth ? std::string("synth") : c.pivot_scores_path);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "bm25:k1=%g,b=%g", c.bm25.k1, c.bm25.b);
    return buf;
}

TruncationReranker make_reranker(const StageConfig& s, const Backends& b)
{
    if (s.reranker == StageReranker::Pairwise) {
        return TruncationReranker::pairwise(*b.oracle, s.scheme);
    }
    return TruncationReranker::pointwise(*b.oracle);
}

const Query& find_query(const Inputs& in, const std::string& id)
{
    auto it = std::lower_bound(in.queries.begin(), in.queries.end(), id,
                               [](const Query& q, const std::string& v) { return q.id < v; });
    return *it;
}

// ----------------------------------------------------------- calibration

/// theta_bar per cascade stage (or the single psi-avg stage); nullopt for
/// Dyn stages.
std::vector<std::optional<double>> calibrate(const ExperimentConfig& c, const Inputs& in,
                                             Backends& b)
{
    std::vector<StageConfig> stages = c.stages;
    if (c.policy == PolicyKind::PsiAvg) {
        stages = {StageConfig{TruncationMode::Avg, c.rerank_stage.reranker, c.rerank_stage.scheme}};
    }
    std::vector<std::optional<double>> out(stages.size());
    const bool any_avg = std::any_of(stages.begin(), stages.end(), [](const StageConfig& s) {
        return s.mode == TruncationMode::Avg;
    });
    if (!any_avg || c.policy == PolicyKind::FixedK || c.policy == PolicyKind::PsiDyn) {
        return out;
    }
    if (in.calibration_ids.empty()) {
        throw std::invalid_argument("Avg truncation needs a calibration split");
    }
    InferenceLedger scratch;  // calibration calls are not charged to test queries
    std::map<std::string, double> first_scores;
    std::vector<PivotDocument> pivots;
    for (const auto& id : in.calibration_ids) {
        const auto& q = find_query(in, id);
        pivots.push_back(obtain_pivot(c, in, b, q, scratch));
        first_scores[id] = first_stage_pivot_score(c, in, q, pivots.back());
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].mode != TruncationMode::Avg) {
            continue;
        }
        std::map<std::string, double> scores;
        std::string scorer;
        if (i == 0) {
            scores = first_scores;
            scorer = first_stage_scorer_id(c);
        } else {
            for (std::size_t j = 0; j < in.calibration_ids.size(); ++j) {
                const auto& q = find_query(in, in.calibration_ids[j]);
                scores[q.id] = stage_pivot_score(*b.oracle, q, pivots[j].as_document(), scratch);
            }
            scorer = "stage" + std::to_string(i) + ":pointwise";
        }
        auto stats = calibrate_avg(in.calibration_ids, scores, scorer);
        stats.check_disjoint(in.test_ids);
        out[i] = stats.theta_bar;
    }
    return out;
}

// -------------------------------------------------------------- per query

struct QueryOutcome {
    std::optional<RankedList> list;
    std::optional<ScheduleTrace> trace;
    std::vector<TruncationDecision> decisions;
    std::optional<PivotDocument> pivot;
    std::optional<double> pivot_score;
    std::optional<PivotRank> pivot_rank;
    std::optional<std::size_t> cut_depth;
    double method_seconds = 0.0;
    double baseline_seconds = 0.0;
};

QueryOutcome run_query(const ExperimentConfig& c, const Inputs& in, Backends& b,
                       const std::vector<std::optional<double>>& thetas, const Query& q,
                       InferenceLedger& ledger)
{
    QueryOutcome out;
    const auto& list = in.first_stage.at(q.id);
    const auto& store = in.store;

    if (policy_needs_pivot(c.policy)) {
        out.pivot = in_stage("pivot", [&] { return obtain_pivot(c, in, b, q, ledger); });
        out.pivot_score = first_stage_pivot_score(c, in, q, *out.pivot);
        out.pivot_rank = insert_rank(list, *out.pivot_score);
        out.cut_depth = out.pivot_rank->position - 1;
    }

    const auto t0 = std::chrono::steady_clock::now();
    in_stage("policy " + std::string(to_string(c.policy)), [&] {
        switch (c.policy) {
            case PolicyKind::FixedK:
            case PolicyKind::PsiDyn:
            case PolicyKind::PsiAvg: {
                TruncationDecision d;
                if (c.policy == PolicyKind::FixedK) {
                    d = partition_fixed(list, c.fixed_k);
                } else if (c.policy == PolicyKind::PsiDyn) {
                    d = partition_dyn(list, *out.pivot_score);
                } else {
                    d = partition_avg(list, *thetas.at(0));
                }
                out.cut_depth = d.cut_depth;
                out.list = psi_rank(list, d, q, store, make_reranker(c.rerank_stage, b), ledger);
                out.decisions.push_back(std::move(d));
                break;
            }
            case PolicyKind::Cascade: {
                std::vector<CascadeStage> stages;
                for (std::size_t i = 0; i < c.stages.size(); ++i) {
                    stages.push_back({c.stages[i].mode, thetas.at(i), make_reranker(c.stages[i], b)});
                }
                out.list = cascade(list, q, store, out.pivot->as_document(), *out.pivot_score,
                                   stages, ledger, &out.decisions);
                out.cut_depth = out.decisions.front().cut_depth;
                break;
            }
            default: {
                if (list.empty()) {
                    out.list = list;
                    break;
                }
                RerankContext ctx{q, store, b.listwise(), ledger, c.inner_workers};
                std::optional<Document> pivot_doc;
                if (out.pivot) {
                    pivot_doc = out.pivot->as_document();
                }
                ScheduleResult r = [&] {
                    switch (c.policy) {
                        case PolicyKind::Sliding: return sliding_window(ctx, list, c.window);
                        case PolicyKind::Snow: return snow(ctx, list, *pivot_doc, c.window);
                        case PolicyKind::VsSliding:
                            return vs_sliding(ctx, list, *pivot_doc, c.window);
                        case PolicyKind::TdPart:
                            return td_part(ctx, list, c.window, c.anchor_k, c.max_merge_depth);
                        default:
                            return gptd_part(ctx, list, *pivot_doc, *out.pivot_rank, c.window,
                                             c.anchor_k, c.max_merge_depth);
                    }
                }();
                out.list = std::move(r.list);
                out.trace = std::move(r.trace);
            }
        }
        return 0;
    });
    out.method_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (c.wall_clock && policy_is_listwise(c.policy) && !list.empty()) {
        InferenceLedger scratch;
        RerankContext ctx{q, store, b.listwise(), scratch, 1};
        const auto t1 = std::chrono::steady_clock::now();
        sliding_window(ctx, list, c.window);
        out.baseline_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    }
    return out;
}

// -------------------------------------------------------------- artifacts

ojson trace_to_json(const ScheduleTrace& t)
{
    ojson j;
    j["method"] = t.method;
    j["m"] = t.m;
    j["listwise_calls"] = t.listwise_calls;
    j["parallelizable_batches"] = t.parallelizable_batches();
    j["batches"] = t.batches;
    ojson windows = ojson::array();
    for (const auto& w : t.windows) {
        windows.push_back(ojson{{"start", w.start},
                                {"end", w.end},
                                {"above_pivot", w.above_pivot},
                                {"stride", w.stride},
                                {"level", w.level}});
    }
    j["windows"] = windows;
    return j;
}

ojson counts_json(const InferenceLedger& ledger, const std::string& qid)
{
    ojson j = ojson::object();
    for (auto kind : kAllCallKinds) {
        j[std::string(to_string(kind))] = ledger.count(qid, kind);
    }
    return j;
}

std::string cutoffs_csv(const std::vector<QueryOutcome>& outcomes, std::size_t depth)
{
    constexpr std::size_t kBin = 10;
    std::vector<std::size_t> bins(depth / kBin + 1, 0);
    for (const auto& o : outcomes) {
        if (o.cut_depth) {
            ++bins[std::min(*o.cut_depth, depth) / kBin];
        }
    }
    std::ostringstream out;
    out << "bin_start,bin_end,queries\n";
    for (std::size_t i = 0; i < bins.size(); ++i) {
        out << i * kBin << ',' << i * kBin + kBin - 1 << ',' << bins[i] << '\n';
    }
    return out.str();
}

ExperimentResult assemble(const ExperimentConfig& c, const Inputs& in,
                          const std::vector<QueryOutcome>& outcomes,
                          const InferenceLedger& ledger)
{
    ExperimentResult r;
    for (std::size_t i = 0; i < in.test_ids.size(); ++i) {
        if (outcomes[i].list) {
            r.run.emplace(in.test_ids[i], *outcomes[i].list);
        }
    }
    r.run_text = emit_trec_run(r.run, c.name);

    r.report = evaluate_run(r.run, in.qrels, c.metrics, c.name);
    r.report.cost_weights = c.cost.weights;
    r.report.parallelism = c.cost.parallelism;
    r.report.set_aggregate("IPQ", ipq(ledger, in.test_ids, c.ipq_kinds));

    if (policy_is_listwise(c.policy)) {
        double base = 0.0;
        double method = 0.0;
        double base_wall = 0.0;
        double method_wall = 0.0;
        for (std::size_t i = 0; i < in.test_ids.size(); ++i) {
            const auto& o = outcomes[i];
            if (!o.trace) {
                continue;
            }
            const auto& qid = in.test_ids[i];
            double pivot_cost = 0.0;
            if (o.pivot) {
                pivot_cost = static_cast<double>(ledger.count(qid, CallKind::PivotGen))
                                 * c.cost.weight(CallKind::PivotGen)
                             + static_cast<double>(ledger.count(qid, CallKind::Judge))
                                   * c.cost.weight(CallKind::Judge);
            }
            base += modeled_time(sliding_baseline_trace(o.trace->m, c.window), c.cost);
            method += modeled_time(*o.trace, c.cost, pivot_cost);
            base_wall += o.baseline_seconds;
            method_wall += o.method_seconds;
        }
        if (method > 0.0) {
            r.report.set_aggregate("SU", base / method);
        }
        if (c.wall_clock && method_wall > 0.0) {
            r.report.set_aggregate("SU_wall", base_wall / method_wall);
        }
    }

    ojson trace;
    trace["name"] = c.name;
    trace["policy"] = std::string(to_string(c.policy));
    ojson kinds = ojson::array();
    for (auto k : c.ipq_kinds) {
        kinds.push_back(std::string(to_string(k)));
    }
    trace["ipq_kinds"] = kinds;
    ojson queries = ojson::object();
    ojson ledger_json = ojson::object();
    for (std::size_t i = 0; i < in.test_ids.size(); ++i) {
        const auto& qid = in.test_ids[i];
        const auto& o = outcomes[i];
        ojson q;
        q["depth"] = in.first_stage.at(qid).size();
        if (o.pivot) {
            q["pivot"] = ojson{{"generator_id", o.pivot->generator_id},
                               {"verified_grade", o.pivot->verified_grade
                                                      ? ojson(o.pivot->verified_grade->value())
                                                      : ojson(nullptr)},
                               {"attempts", o.pivot->attempts},
                               {"token_estimate", o.pivot->token_estimate},
                               {"first_stage_score", *o.pivot_score},
                               {"insert_rank", o.pivot_rank->position}};
        } else {
            q["pivot"] = nullptr;
        }
        ojson decisions = ojson::array();
        for (const auto& d : o.decisions) {
            decisions.push_back(ojson{{"mode", std::string(to_string(d.mode))},
                                      {"threshold", std::isfinite(d.threshold)
                                                        ? ojson(d.threshold)
                                                        : ojson("inf")},
                                      {"cut_depth", d.cut_depth}});
        }
        q["truncation"] = decisions;
        q["schedule"] = o.trace ? trace_to_json(*o.trace) : ojson(nullptr);
        q["calls"] = counts_json(ledger, qid);
        queries[qid] = q;
        ledger_json[qid] = counts_json(ledger, qid);
    }
    trace["queries"] = queries;
    r.trace_json = trace.dump(2) + "\n";
    r.ledger_json = ledger_json.dump(2) + "\n";
    r.cutoffs_csv = cutoffs_csv(outcomes, c.depth);
    return r;
}

}  // namespace

// ------------------------------------------------------------------ public

std::string_view to_string(PolicyKind kind)
{
    switch (kind) {
        case PolicyKind::FixedK: return "fixed-k";
        case PolicyKind::PsiDyn: return "psi-dyn";
        case PolicyKind::PsiAvg: return "psi-avg";
        case PolicyKind::Cascade: return "cascade";
        case PolicyKind::Sliding: return "sliding";
        case PolicyKind::Snow: return "snow";
        case PolicyKind::VsSliding: return "vs-sliding";
        case PolicyKind::TdPart: return "tdpart";
        case PolicyKind::GptdPart: return "gptd-part";
    }
    return "?";
}

PolicyKind policy_kind_from_string(std::string_view name)
{
    for (auto k : {PolicyKind::FixedK, PolicyKind::PsiDyn, PolicyKind::PsiAvg, PolicyKind::Cascade,
                   PolicyKind::Sliding, PolicyKind::Snow, PolicyKind::VsSliding, PolicyKind::TdPart,
                   PolicyKind::GptdPart}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown policy: " + std::string(name));
}

bool policy_needs_pivot(PolicyKind kind)
{
    return kind == PolicyKind::PsiDyn || kind == PolicyKind::PsiAvg || kind == PolicyKind::Cascade
           || kind == PolicyKind::Snow || kind == PolicyKind::VsSliding
           || kind == PolicyKind::GptdPart;
}

bool policy_is_listwise(PolicyKind kind)
{
    return kind == PolicyKind::Sliding || kind == PolicyKind::Snow
           || kind == PolicyKind::VsSliding || kind == PolicyKind::TdPart
           || kind == PolicyKind::GptdPart;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::string& base_dir)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    try {
        check_keys(j,
                   {"name", "seed", "workers", "inner_workers", "output_dir", "data", "synth",
                    "first_stage", "pivot", "policy", "backend", "calibration", "metrics", "cost"},
                   "config");
        read(j, "name", c.name);
        read(j, "seed", c.seed);
        read(j, "workers", c.workers);
        read(j, "inner_workers", c.inner_workers);
        if (j.contains("output_dir")) {
            c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
        }
        c.noise.seed = c.seed;

        if (j.contains("data")) {
            const auto& d = j.at("data");
            check_keys(d, {"corpus", "queries", "qrels", "run", "pivot_scores"}, "data");
            auto path = [&](const char* key, std::string& out) {
                if (d.contains(key)) {
                    out = resolve(base_dir, d.at(key).get<std::string>());
                }
            };
            path("corpus", c.corpus_path);
            path("queries", c.queries_path);
            path("qrels", c.qrels_path);
            path("run", c.run_path);
            path("pivot_scores", c.pivot_scores_path);
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            check_keys(s,
                       {"seed", "num_queries", "m", "docs_per_query", "grade_distribution",
                        "quality", "vocab_size", "doc_length", "relevant_depth"},
                       "synth");
            SynthSpec spec;
            read(s, "seed", spec.seed);
            read(s, "num_queries", spec.num_queries);
            read(s, "m", spec.m);
            read(s, "docs_per_query", spec.docs_per_query);
            read(s, "grade_distribution", spec.grade_distribution);
            read(s, "quality", spec.quality);
            read(s, "vocab_size", spec.vocab_size);
            read(s, "doc_length", spec.doc_length);
            read(s, "relevant_depth", spec.relevant_depth);
            c.synth = spec;
        }

        if (j.contains("first_stage")) {
            const auto& f = j.at("first_stage");
            check_keys(f, {"type", "depth", "k1", "b"}, "first_stage");
            const auto type = f.value("type", std::string("bm25"));
            if (type != "bm25" && type != "run-file") {
                throw std::invalid_argument("first_stage.type must be bm25 or run-file");
            }
            c.first_stage_bm25 = type == "bm25";
            read(f, "depth", c.depth);
            read(f, "k1", c.bm25.k1);
            read(f, "b", c.bm25.b);
        }

        if (j.contains("pivot")) {
            const auto& p = j.at("pivot");
            check_keys(p,
                       {"generator", "judge", "tau", "min_tokens", "max_tokens", "max_attempts",
                        "cache", "score_source", "chat"},
                       "pivot");
            read(p, "generator", c.pivot_generator);
            read(p, "judge", c.pivot_judge);
            read(p, "tau", c.tau);
            read(p, "min_tokens", c.length.min_tokens);
            c.length.max_tokens = 0;
            read(p, "max_tokens", c.length.max_tokens);
            read(p, "max_attempts", c.max_attempts);
            if (p.contains("cache")) {
                c.pivot_cache_path = resolve(base_dir, p.at("cache").get<std::string>());
            }
            read(p, "score_source", c.pivot_score_source);
            if (p.contains("chat")) {
                c.pivot_chat = parse_chat(p.at("chat"), "pivot.chat");
            }
        } else {
            c.length.max_tokens = 0;
        }

        if (!j.contains("policy")) {
            throw std::invalid_argument("config.policy is required");
        }
        {
            const auto& p = j.at("policy");
            check_keys(p,
                       {"type", "k", "reranker", "pairwise_scheme", "stages", "w", "stride",
                        "s_max", "anchor_k", "max_merge_depth"},
                       "policy");
            c.policy = policy_kind_from_string(p.at("type").get<std::string>());
            read(p, "k", c.fixed_k);
            json stage_keys = json::object();
            for (const char* k : {"reranker", "pairwise_scheme"}) {
                if (p.contains(k)) {
                    stage_keys[k] = p.at(k);
                }
            }
            c.rerank_stage = parse_stage(stage_keys, "policy");
            if (p.contains("stages")) {
                for (std::size_t i = 0; i < p.at("stages").size(); ++i) {
                    c.stages.push_back(parse_stage(p.at("stages").at(i),
                                                   "policy.stages[" + std::to_string(i) + "]"));
                }
            }
            read(p, "w", c.window.w);
            read(p, "stride", c.window.stride);
            read(p, "s_max", c.window.s_max);
            read(p, "anchor_k", c.anchor_k);
            read(p, "max_merge_depth", c.max_merge_depth);
        }

        if (j.contains("backend")) {
            const auto& b = j.at("backend");
            check_keys(b,
                       {"type", "epsilon", "seed", "passes_per_item", "pivot_utility", "chat",
                        "prompt", "parse_retries"},
                       "backend");
            read(b, "type", c.backend);
            read(b, "epsilon", c.noise.epsilon);
            read(b, "seed", c.noise.seed);
            read(b, "passes_per_item", c.noise.passes_per_item);
            read(b, "pivot_utility", c.pivot_utility);
            if (b.contains("chat")) {
                c.backend_chat = parse_chat(b.at("chat"), "backend.chat");
            }
            if (b.contains("prompt")) {
                const auto& pr = b.at("prompt");
                check_keys(pr, {"system", "preamble", "instruction", "max_passage_words"},
                           "backend.prompt");
                read(pr, "system", c.listwise_prompt.system);
                read(pr, "preamble", c.listwise_prompt.preamble);
                read(pr, "instruction", c.listwise_prompt.instruction);
                read(pr, "max_passage_words", c.listwise_prompt.max_passage_words);
            }
            read(b, "parse_retries", c.listwise_parse_retries);
        }

        if (j.contains("calibration")) {
            const auto& cal = j.at("calibration");
            check_keys(cal, {"queries", "fraction"}, "calibration");
            read(cal, "queries", c.calibration_queries);
            read(cal, "fraction", c.calibration_fraction);
        }

        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            check_keys(m, {"ndcg_k", "map_k", "threshold", "gain", "ipq_kinds"}, "metrics");
            read(m, "ndcg_k", c.metrics.ndcg_k);
            read(m, "map_k", c.metrics.map_k);
            read(m, "threshold", c.metrics.threshold);
            if (m.contains("gain")) {
                c.metrics.gain = gain_from_string(m.at("gain").get<std::string>());
            }
            if (m.contains("ipq_kinds")) {
                c.ipq_kinds.clear();
                for (const auto& k : m.at("ipq_kinds")) {
                    c.ipq_kinds.push_back(call_kind_from_string(k.get<std::string>()));
                }
            }
        }

        if (j.contains("cost")) {
            const auto& k = j.at("cost");
            check_keys(k, {"weights", "parallelism", "wall_clock"}, "cost");
            if (k.contains("weights")) {
                for (const auto& [name, w] : k.at("weights").items()) {
                    c.cost.weights[call_kind_from_string(name)] = w.get<double>();
                }
            }
            read(k, "parallelism", c.cost.parallelism);
            read(k, "wall_clock", c.wall_clock);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path)
{
    const auto base = fs::path(path).parent_path().string();
    return from_json(read_file(path), base.empty() ? "." : base);
}

void ExperimentConfig::validate() const
{
    if (workers < 1 || inner_workers < 1) {
        throw std::invalid_argument("workers and inner_workers must be >= 1");
    }
    if (depth < 1) {
        throw std::invalid_argument("first_stage.depth must be >= 1");
    }
    if (synth) {
        synth->validate();
    } else {
        for (const auto& [key, p] : {std::pair{"data.corpus", &corpus_path},
                                     std::pair{"data.queries", &queries_path},
                                     std::pair{"data.qrels", &qrels_path}}) {
            if (p->empty()) {
                throw std::invalid_argument(std::string(key) + " is required");
            }
        }
    }
    if (!first_stage_bm25 && synth == std::nullopt && run_path.empty()) {
        throw std::invalid_argument("run-file first stage needs data.run");
    }
    if (policy_needs_pivot(policy)) {
        RelevanceGrade{tau};
        if (pivot_generator != "oracle" && pivot_generator != "http") {
            throw std::invalid_argument("pivot.generator must be oracle or http");
        }
        if (pivot_judge != "oracle" && pivot_judge != "http" && pivot_judge != "none") {
            throw std::invalid_argument("pivot.judge must be oracle, http or none");
        }
        if (max_attempts < 1) {
            throw std::invalid_argument("pivot.max_attempts must be >= 1");
        }
        if (length.min_tokens < 0 || length.max_tokens < 0
            || (length.max_tokens > 0 && length.min_tokens > length.max_tokens)) {
            throw std::invalid_argument("pivot length bounds are inconsistent");
        }
        const auto src = score_source(*this);
        if (src != "file" && src != "text") {
            throw std::invalid_argument("pivot.score_source must be file or text");
        }
        if (src == "file" && pivot_scores_path.empty() && !synth) {
            throw std::invalid_argument("pivot.score_source 'file' needs data.pivot_scores");
        }
    }
    if (backend != "oracle" && backend != "http") {
        throw std::invalid_argument("backend.type must be oracle or http");
    }
    if (backend == "http" && !policy_is_listwise(policy)) {
        throw std::invalid_argument(
            "the http backend serves listwise policies only; pointwise and pairwise stages use "
            "the oracle");
    }
    noise.validate();
    if (!(pivot_utility > 1.5 && pivot_utility < 2.0)) {
        throw std::invalid_argument("backend.pivot_utility must lie in (1.5, 2)");
    }
    switch (policy) {
        case PolicyKind::FixedK:
            if (fixed_k < 1) {
                throw std::invalid_argument("policy.k must be >= 1");
            }
            break;
        case PolicyKind::Cascade: {
            if (stages.empty()) {
                throw std::invalid_argument("cascade needs policy.stages");
            }
            for (std::size_t i = 0; i < stages.size(); ++i) {
                if (stages[i].mode == TruncationMode::Fixed) {
                    throw std::invalid_argument("cascade stages must be dyn or avg");
                }
                if (i + 1 < stages.size() && stages[i].reranker != StageReranker::Pointwise) {
                    throw std::invalid_argument(
                        "only the last cascade stage may use a pairwise reranker");
                }
            }
            break;
        }
        default: break;
    }
    if (policy_is_listwise(policy)) {
        window.validate();
        if (anchor_k < 1 || anchor_k > window.w) {
            throw std::invalid_argument("policy.anchor_k must lie in [1, w]");
        }
    }
    if (calibration_fraction < 0.0 || calibration_fraction >= 1.0) {
        throw std::invalid_argument("calibration.fraction must lie in [0, 1)");
    }
    const bool needs_calibration =
        policy == PolicyKind::PsiAvg
        || (policy == PolicyKind::Cascade
            && std::any_of(stages.begin(), stages.end(),
                           [](const StageConfig& s) { return s.mode == TruncationMode::Avg; }));
    if (needs_calibration && calibration_queries.empty() && calibration_fraction == 0.0) {
        throw std::invalid_argument("avg truncation needs a calibration split");
    }
    metrics.validate();
    cost.validate();
}

ExperimentResult run_experiment(const ExperimentConfig& config)
{
    config.validate();
    std::vector<QueryOutcome> outcomes;
    std::optional<Inputs> in;
    InferenceLedger ledger(config.cost.weights);
    try {
        in = in_stage("load", [&] { return load_inputs(config); });
        auto backends = in_stage("backends", [&] { return make_backends(config, *in); });
        const auto thetas = in_stage("calibration", [&] { return calibrate(config, *in, *backends); });

        outcomes.resize(in->test_ids.size());
        parallel_for(in->test_ids.size(), config.workers, [&](std::size_t i) {
            const auto& q = find_query(*in, in->test_ids[i]);
            try {
                outcomes[i] = run_query(config, *in, *backends, thetas, q, ledger);
            } catch (const std::exception& e) {
                throw std::runtime_error("query " + q.id + ": " + e.what());
            }
        });

        if (!config.pivot_cache_path.empty() && policy_needs_pivot(config.policy)) {
            backends->cache.save(config.pivot_cache_path);
        }
        auto result = in_stage("evaluate", [&] { return assemble(config, *in, outcomes, ledger); });
        if (!config.output_dir.empty()) {
            write_artifacts(result, config.output_dir);
        }
        return result;
    } catch (const std::exception& e) {
        if (!config.output_dir.empty()) {
            fs::create_directories(config.output_dir);
            const fs::path dir(config.output_dir);
            if (in) {
                Run partial;
                for (std::size_t i = 0; i < outcomes.size(); ++i) {
                    if (outcomes[i].list) {
                        partial.emplace(in->test_ids[i], *outcomes[i].list);
                    }
                }
                write_file((dir / "run.partial.txt").string(), emit_trec_run(partial, config.name));
            }
            write_file((dir / "FAILED").string(), std::string(e.what()) + "\n");
        }
        throw;
    }
}

void write_artifacts(const ExperimentResult& result, const std::string& dir)
{
    fs::create_directories(dir);
    const fs::path p(dir);
    fs::remove(p / "FAILED");
    fs::remove(p / "run.partial.txt");
    write_file((p / "run.txt").string(), result.run_text);
    write_file((p / "trace.json").string(), result.trace_json);
    write_file((p / "ledger.json").string(), result.ledger_json);
    write_file((p / "report.json").string(), result.report.to_json());
    write_file((p / "cutoffs.csv").string(), result.cutoffs_csv);
}

std::string plan_experiment(const ExperimentConfig& config)
{
    config.validate();
    const auto in = load_inputs(config);
    const bool pivot = policy_needs_pivot(config.policy);
    const bool known_scores = pivot && score_source(config) == "file";
    const int gen_max = pivot ? (config.pivot_judge == "none" ? 1 : config.max_attempts) : 0;
    const int judge_max = pivot && config.pivot_judge != "none" ? config.max_attempts : 0;

    std::ostringstream out;
    out << "experiment " << config.name << ": policy " << to_string(config.policy) << ", "
        << in.test_ids.size() << " test queries, " << in.calibration_ids.size()
        << " calibration queries\n";
    if (pivot) {
        out << "pivot: generator " << config.pivot_generator << ", judge " << config.pivot_judge
            << ", tau " << config.tau << ", max tokens "
            << effective_bounds(config, in).max_tokens << "\n";
    }
    out << "query  depth  pivot_gen  judge  rerank_calls\n";

    std::size_t total_min = 0;
    std::size_t total_max = 0;
    bool unbounded = false;
    for (const auto& qid : in.test_ids) {
        const auto& list = in.first_stage.at(qid);
        const auto m = list.size();
        std::size_t lo = 0;
        std::optional<std::size_t> hi;
        std::optional<std::size_t> kp;
        if (known_scores) {
            kp = insert_rank(list, in.pivot_scores.at(qid)).position;
        }
        auto truncation_calls = [&](std::size_t n, const StageConfig& s) -> std::size_t {
            if (s.reranker == StageReranker::Pointwise) {
                return n;
            }
            if (s.scheme == PairwiseScheme::SinglePass) {
                return n == 0 ? 0 : n - 1;
            }
            return n * (n == 0 ? 0 : n - 1) / 2;
        };
        switch (config.policy) {
            case PolicyKind::FixedK:
                lo = truncation_calls(std::min(config.fixed_k, m), config.rerank_stage);
                hi = lo;
                break;
            case PolicyKind::PsiDyn:
                if (kp) {
                    lo = truncation_calls(*kp - 1, config.rerank_stage);
                    hi = lo;
                } else {
                    hi = truncation_calls(m, config.rerank_stage);
                }
                break;
            case PolicyKind::PsiAvg:
            case PolicyKind::Cascade: {
                std::size_t bound = 0;
                const auto& stages =
                    config.policy == PolicyKind::Cascade
                        ? config.stages
                        : std::vector<StageConfig>{config.rerank_stage};
                for (std::size_t i = 0; i < stages.size(); ++i) {
                    bound += truncation_calls(m, stages[i]) + (i > 0 ? 1 : 0);
                }
                hi = bound;
                break;
            }
            default: {
                if (m == 0) {
                    hi = 0;
                    break;
                }
                const auto method = listwise_method_from_string(to_string(config.policy));
                const auto plan = plan_listwise_calls(method, m, config.window,
                                                      kp ? kp : std::optional<std::size_t>(m));
                lo = plan.min;
                hi = plan.max;
            }
        }
        total_min += lo;
        if (hi) {
            total_max += *hi;
        } else {
            unbounded = true;
        }
        out << qid << "  " << m << "  <=" << gen_max << "  <=" << judge_max << "  " << lo;
        if (!hi) {
            out << "+";
        } else if (*hi != lo) {
            out << ".." << *hi;
        }
        out << "\n";
    }
    out << "total rerank calls: " << total_min;
    if (unbounded) {
        out << "+";
    } else if (total_max != total_min) {
        out << ".." << total_max;
    }
    out << "; pivot_gen <= " << gen_max * in.test_ids.size() << ", judge <= "
        << judge_max * in.test_ids.size() << "\n";
    return out.str();
}

}  // namespace pivotrank
