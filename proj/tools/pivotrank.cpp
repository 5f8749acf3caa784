// Command-line front end: one verb per pipeline step plus declarative experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pivotrank/bm25.hpp"
#include "pivotrank/experiment.hpp"
#include "pivotrank/metrics.hpp"
#include "pivotrank/pivot.hpp"
#include "pivotrank/rerankers.hpp"
#include "pivotrank/schedulers.hpp"
#include "pivotrank/synth.hpp"
#include "pivotrank/trec_io.hpp"
#include "pivotrank/truncation.hpp"

using namespace pivotrank;
namespace fs = std::filesystem;

namespace {

struct ChatOpts {
    std::string url = ChatConfig{}.url;
    std::string model;
    std::string api_key_env = ChatConfig{}.api_key_env;
    int max_retries = ChatConfig{}.max_retries;
    std::int64_t timeout_ms = 60000;

    void attach(CLI::App* app)
    {
        app->add_option("--url", url, "Chat-completions endpoint");
        app->add_option("--model", model, "Model name sent to the endpoint");
        app->add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
        app->add_option("--max-retries", max_retries);
        app->add_option("--timeout-ms", timeout_ms);
    }

    ChatConfig config() const
    {
        ChatConfig c;
        c.url = url;
        c.model = model;
        c.api_key_env = api_key_env;
        c.max_retries = max_retries;
        c.timeout = std::chrono::milliseconds(timeout_ms);
        return c;
    }
};

void write_or_print(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_file(path, text);
    }
}

std::vector<Query> sorted_queries(const std::string& path)
{
    auto qs = load_queries(path);
    std::sort(qs.begin(), qs.end(), [](const Query& a, const Query& b) { return a.id < b.id; });
    return qs;
}

// Pivot text for a query from a cache, preferring the requested tau.
std::optional<PivotDocument> cached_pivot(const PivotCache& cache, const std::string& qid, int tau)
{
    auto docs = cache.for_query(qid);
    for (const auto& d : docs) {
        if (d.tau.value() == tau) {
            return d;
        }
    }
    return std::nullopt;
}

std::string trace_json(const std::map<std::string, ScheduleTrace>& traces)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [qid, t] : traces) {
        nlohmann::ordered_json windows = nlohmann::ordered_json::array();
        for (const auto& w : t.windows) {
            windows.push_back({{"start", w.start},
                               {"end", w.end},
                               {"above_pivot", w.above_pivot},
                               {"stride", w.stride},
                               {"level", w.level}});
        }
        j[qid] = {{"method", t.method},
                  {"m", t.m},
                  {"listwise_calls", t.listwise_calls},
                  {"parallelizable_batches", t.parallelizable_batches()},
                  {"batches", t.batches},
                  {"windows", windows}};
    }
    return j.dump(2) + "\n";
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"pivotrank: pivot-guided truncation and listwise reranking"};
    app.require_subcommand(1);
    bool dry_run = false;
    app.add_flag("--dry-run", dry_run, "Print planned backend call counts and exit");

    // index
    auto* index_cmd = app.add_subcommand("index", "Build a BM25 index from a JSONL corpus");
    std::string corpus_path, index_path;
    Bm25Params bm25;
    index_cmd->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
    index_cmd->add_option("--out", index_path)->required();
    index_cmd->add_option("--k1", bm25.k1);
    index_cmd->add_option("--b", bm25.b);

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "BM25 first-stage retrieval");
    std::string queries_path, run_out, tag = "bm25";
    std::size_t depth = 100;
    retrieve_cmd->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
    retrieve_cmd->add_option("--queries", queries_path)->required()->check(CLI::ExistingFile);
    retrieve_cmd->add_option("--depth", depth);
    retrieve_cmd->add_option("--tag", tag);
    retrieve_cmd->add_option("--out", run_out, "TREC run output (default stdout)");

    // pivot
    auto* pivot_cmd = app.add_subcommand("pivot", "Generate and verify pivot documents");
    std::string cache_path, qrels_path, generator = "oracle", judge = "oracle", scores_out;
    int tau = 2, max_attempts = 3, max_tokens = 0;
    std::uint64_t seed = 0;
    ChatOpts pivot_chat;
    pivot_cmd->add_option("--queries", queries_path)->required()->check(CLI::ExistingFile);
    pivot_cmd->add_option("--corpus", corpus_path)->check(CLI::ExistingFile);
    pivot_cmd->add_option("--qrels", qrels_path, "Judgments for the oracle generator")
        ->check(CLI::ExistingFile);
    pivot_cmd->add_option("--cache", cache_path, "Pivot cache (JSONL), read and updated")
        ->required();
    pivot_cmd->add_option("--generator", generator)->check(CLI::IsMember({"oracle", "http"}));
    pivot_cmd->add_option("--judge", judge)->check(CLI::IsMember({"oracle", "http", "none"}));
    pivot_cmd->add_option("--tau", tau)->check(CLI::Range(0, 3));
    pivot_cmd->add_option("--max-attempts", max_attempts)->check(CLI::PositiveNumber);
    pivot_cmd->add_option("--max-tokens", max_tokens, "0 derives the bound from the corpus");
    pivot_cmd->add_option("--seed", seed);
    pivot_cmd->add_option("--index", index_path, "Score pivots with this BM25 index")
        ->check(CLI::ExistingFile);
    pivot_cmd->add_option("--scores-out", scores_out, "Write first-stage pivot scores (JSON)");
    pivot_chat.attach(pivot_cmd);

    // truncate
    auto* truncate_cmd = app.add_subcommand("truncate", "PSI-Rank truncation and head reranking");
    std::string run_path, mode = "dyn", pivot_scores_path, stats_out, reranker = "pointwise",
                                     scheme = "all-pairs", calibration_path;
    std::size_t fixed_k = 100;
    truncate_cmd->add_option("--run", run_path)->required()->check(CLI::ExistingFile);
    truncate_cmd->add_option("--mode", mode)->check(CLI::IsMember({"dyn", "avg", "fixed"}));
    truncate_cmd->add_option("--pivot-scores", pivot_scores_path, "First-stage pivot scores (JSON)")
        ->check(CLI::ExistingFile);
    truncate_cmd->add_option("--k", fixed_k, "Depth for --mode fixed");
    truncate_cmd->add_option("--calibration", calibration_path,
                             "Calibration stats JSON, or a file of query ids to calibrate on")
        ->check(CLI::ExistingFile);
    truncate_cmd->add_option("--reranker", reranker)
        ->check(CLI::IsMember({"none", "pointwise", "pairwise"}));
    truncate_cmd->add_option("--pairwise-scheme", scheme)
        ->check(CLI::IsMember({"all-pairs", "single-pass"}));
    truncate_cmd->add_option("--qrels", qrels_path, "Judgments behind the oracle reranker")
        ->check(CLI::ExistingFile);
    truncate_cmd->add_option("--out", run_out);
    truncate_cmd->add_option("--stats", stats_out, "Per-query cut depths and thresholds (JSON)");

    // rerank
    auto* rerank_cmd = app.add_subcommand("rerank", "Listwise reranking with a window scheduler");
    std::string method = "sliding", backend = "oracle", trace_out;
    WindowSpec window;
    std::size_t anchor_k = 10;
    double epsilon = 0.0;
    ChatOpts rerank_chat;
    rerank_cmd->add_option("--run", run_path)->required()->check(CLI::ExistingFile);
    rerank_cmd->add_option("--queries", queries_path)->required()->check(CLI::ExistingFile);
    rerank_cmd->add_option("--corpus", corpus_path)->check(CLI::ExistingFile);
    rerank_cmd->add_option("--method", method)
        ->check(CLI::IsMember({"sliding", "snow", "vs-sliding", "tdpart", "gptd-part"}));
    rerank_cmd->add_option("--w", window.w);
    rerank_cmd->add_option("--stride", window.stride);
    rerank_cmd->add_option("--s-max", window.s_max);
    rerank_cmd->add_option("--anchor-k", anchor_k);
    rerank_cmd->add_option("--depth", depth);
    rerank_cmd->add_option("--pivot-cache", cache_path)->check(CLI::ExistingFile);
    rerank_cmd->add_option("--tau", tau);
    rerank_cmd->add_option("--pivot-scores", pivot_scores_path, "Gives k_p for gptd-part")
        ->check(CLI::ExistingFile);
    rerank_cmd->add_option("--backend", backend)->check(CLI::IsMember({"oracle", "http"}));
    rerank_cmd->add_option("--qrels", qrels_path)->check(CLI::ExistingFile);
    rerank_cmd->add_option("--epsilon", epsilon)->check(CLI::Range(0.0, 1.0));
    rerank_cmd->add_option("--seed", seed);
    rerank_cmd->add_option("--out", run_out);
    rerank_cmd->add_option("--trace", trace_out, "ScheduleTrace JSON output");
    rerank_chat.attach(rerank_cmd);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "nDCG@k and MAP@k of a run");
    std::vector<std::size_t> ndcg_k{10};
    MetricConfig mcfg;
    std::string gain = "exponential", label, report_out;
    eval_cmd->add_option("--run", run_path)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--qrels", qrels_path)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--k", ndcg_k, "nDCG cutoffs");
    eval_cmd->add_option("--map-k", mcfg.map_k);
    eval_cmd->add_option("--threshold", mcfg.threshold)->check(CLI::Range(0, 3));
    eval_cmd->add_option("--gain", gain)->check(CLI::IsMember({"exponential", "linear"}));
    eval_cmd->add_option("--label", label);
    eval_cmd->add_option("--out", report_out, "MetricReport JSON output");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark");
    SynthSpec spec;
    std::string synth_dir;
    std::vector<double> dist{spec.grade_distribution.begin(), spec.grade_distribution.end()};
    synth_cmd->add_option("--out", synth_dir)->required();
    synth_cmd->add_option("--seed", spec.seed);
    synth_cmd->add_option("--queries", spec.num_queries);
    synth_cmd->add_option("--m", spec.m);
    synth_cmd->add_option("--docs-per-query", spec.docs_per_query);
    synth_cmd->add_option("--grades", dist, "Probabilities of grades 0..3")->expected(4);
    synth_cmd->add_option("--quality", spec.quality)->check(CLI::Range(0.0, 1.0));
    synth_cmd->add_option("--vocab", spec.vocab_size);
    synth_cmd->add_option("--doc-length", spec.doc_length);
    synth_cmd->add_option("--relevant-depth", spec.relevant_depth);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Run a declarative experiment config");
    std::string config_path, output_dir;
    std::size_t workers = 0;
    exp_cmd->add_option("config", config_path)->required()->check(CLI::ExistingFile);
    exp_cmd->add_option("--output-dir", output_dir, "Overrides output_dir");
    exp_cmd->add_option("--workers", workers, "Overrides workers");

    // compare
    auto* cmp_cmd = app.add_subcommand("compare", "Side-by-side table of MetricReports");
    std::vector<std::string> reports;
    cmp_cmd->add_option("reports", reports)->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (index_cmd->parsed()) {
            auto index = Bm25Index::build(load_documents(corpus_path), bm25);
            index.save(index_path);
            std::fprintf(stderr, "indexed %zu docs, avgdl %.2f\n", index.num_docs(), index.avgdl());
        } else if (retrieve_cmd->parsed()) {
            const auto index = Bm25Index::load(index_path);
            Run run;
            for (const auto& q : sorted_queries(queries_path)) {
                run.emplace(q.id, index.retrieve(q, depth));
            }
            write_or_print(run_out, emit_trec_run(run, tag));
        } else if (pivot_cmd->parsed()) {
            const auto queries = sorted_queries(queries_path);
            const int gen_max = judge == "none" ? 1 : max_attempts;
            if (dry_run) {
                std::printf("pivot: %zu queries, pivot_gen <= %zu, judge <= %zu\n",
                            queries.size(), queries.size() * static_cast<std::size_t>(gen_max),
                            judge == "none" ? 0 : queries.size() * static_cast<std::size_t>(max_attempts));
                return 0;
            }
            std::vector<Document> corpus;
            if (!corpus_path.empty()) {
                corpus = load_documents(corpus_path);
            }
            std::unique_ptr<PivotGenerator> gen;
            if (generator == "http") {
                gen = std::make_unique<HttpPivotGenerator>(pivot_chat.config());
            } else {
                if (qrels_path.empty()) {
                    throw std::invalid_argument("the oracle generator needs --qrels");
                }
                gen = std::make_unique<OracleGenerator>(corpus, load_qrels(qrels_path), seed);
            }
            std::unique_ptr<Judge> j;
            if (judge == "http") {
                j = std::make_unique<HttpJudge>(pivot_chat.config());
            } else if (judge == "oracle") {
                j = std::make_unique<OracleJudge>();
            }
            std::optional<Bm25Index> index;
            if (!index_path.empty()) {
                index = Bm25Index::load(index_path);
            }
            LengthBounds bounds;
            if (max_tokens > 0) {
                bounds.max_tokens = max_tokens;
            } else {
                double avgdl = index ? index->avgdl() : 0.0;
                if (!index && !corpus.empty()) {
                    std::size_t total = 0;
                    for (const auto& d : corpus) {
                        total += tokenize(d.text).size();
                    }
                    avgdl = static_cast<double>(total) / static_cast<double>(corpus.size());
                }
                bounds.max_tokens = default_max_tokens(avgdl);
            }
            PivotCache cache;
            if (fs::exists(cache_path)) {
                cache.load(cache_path);
            }
            InferenceLedger ledger;
            nlohmann::ordered_json scores = nlohmann::ordered_json::object();
            for (const auto& q : queries) {
                auto doc = cache.get_or_generate(q.id, RelevanceGrade(tau), gen->id(), [&] {
                    return j ? generate_verified_pivot(*gen, *j, q, RelevanceGrade(tau), bounds,
                                                       max_attempts, ledger)
                             : generate_pivot(*gen, q, RelevanceGrade(tau), bounds, ledger);
                });
                if (index) {
                    scores[q.id] = index->score_text(q, doc.text);
                }
            }
            cache.save(cache_path);
            if (!scores_out.empty()) {
                write_file(scores_out, scores.dump(2) + "\n");
            }
            std::fprintf(stderr, "pivots: %zu cached, %llu generated, %llu judged\n", cache.size(),
                         static_cast<unsigned long long>(ledger.total(CallKind::PivotGen)),
                         static_cast<unsigned long long>(ledger.total(CallKind::Judge)));
        } else if (truncate_cmd->parsed()) {
            const auto run = load_trec_run(run_path);
            std::map<std::string, double> pivot_scores;
            if (!pivot_scores_path.empty()) {
                pivot_scores = load_pivot_scores(pivot_scores_path);
            }
            std::optional<double> theta;
            std::set<std::string> calibration_ids;
            if (mode == "avg") {
                if (calibration_path.empty()) {
                    throw std::invalid_argument("--mode avg needs --calibration");
                }
                const auto text = read_file(calibration_path);
                if (!text.empty() && text.front() == '{') {
                    auto stats = CalibrationStats::from_json(text);
                    calibration_ids = stats.calibration_query_ids;
                    theta = stats.theta_bar;
                } else {
                    std::istringstream ids(text);
                    std::vector<std::string> qs;
                    for (std::string id; ids >> id;) {
                        qs.push_back(id);
                    }
                    auto stats = calibrate_avg(qs, pivot_scores, "file:" + pivot_scores_path);
                    calibration_ids = stats.calibration_query_ids;
                    theta = stats.theta_bar;
                }
            }
            if (mode == "dyn" && pivot_scores_path.empty()) {
                throw std::invalid_argument("--mode dyn needs --pivot-scores");
            }
            std::shared_ptr<OracleJudgments> truth;
            std::unique_ptr<OracleReranker> oracle;
            if (reranker != "none") {
                if (qrels_path.empty()) {
                    throw std::invalid_argument("the oracle reranker needs --qrels");
                }
                truth = std::make_shared<OracleJudgments>(load_qrels(qrels_path), run);
                oracle = std::make_unique<OracleReranker>(truth);
            }
            InferenceLedger ledger;
            Run out;
            nlohmann::ordered_json stats = nlohmann::ordered_json::object();
            const DocumentStore store;
            for (const auto& [qid, list] : run) {
                if (calibration_ids.contains(qid)) {
                    continue;
                }
                TruncationDecision d;
                if (mode == "fixed") {
                    d = partition_fixed(list, fixed_k);
                } else if (mode == "avg") {
                    d = partition_avg(list, *theta);
                } else {
                    auto it = pivot_scores.find(qid);
                    if (it == pivot_scores.end()) {
                        throw std::invalid_argument("no pivot score for query " + qid);
                    }
                    d = partition_dyn(list, it->second);
                }
                stats[qid] = {{"cut_depth", d.cut_depth},
                              {"threshold", std::isfinite(d.threshold)
                                                ? nlohmann::ordered_json(d.threshold)
                                                : nlohmann::ordered_json("inf")}};
                if (dry_run) {
                    continue;
                }
                if (!oracle) {
                    out.emplace(qid, list);
                    continue;
                }
                const Query q{qid, ""};
                auto r = reranker == "pairwise"
                             ? TruncationReranker::pairwise(*oracle,
                                                            pairwise_scheme_from_string(scheme))
                             : TruncationReranker::pointwise(*oracle);
                out.emplace(qid, psi_rank(list, d, q, store, r, ledger));
            }
            if (dry_run) {
                std::size_t total = 0;
                for (const auto& [qid, s] : stats.items()) {
                    const std::size_t n = s.at("cut_depth").get<std::size_t>();
                    const std::size_t calls = reranker == "pairwise"
                                                  ? (scheme == "single-pass" ? (n ? n - 1 : 0)
                                                                             : n * (n ? n - 1 : 0) / 2)
                                                  : (reranker == "none" ? 0 : n);
                    std::printf("%s  n=%zu  %s_calls=%zu\n", qid.c_str(), n, reranker.c_str(),
                                calls);
                    total += calls;
                }
                std::printf("total %s calls: %zu\n", reranker.c_str(), total);
                return 0;
            }
            write_or_print(run_out, emit_trec_run(out, "psi-" + mode));
            if (!stats_out.empty()) {
                write_file(stats_out, stats.dump(2) + "\n");
            }
        } else if (rerank_cmd->parsed()) {
            window.validate();
            const auto run = load_trec_run(run_path);
            const auto queries = sorted_queries(queries_path);
            const auto lm = listwise_method_from_string(method);
            std::map<std::string, double> pivot_scores;
            if (!pivot_scores_path.empty()) {
                pivot_scores = load_pivot_scores(pivot_scores_path);
            }
            auto cut = [&](const RankedList& l) {
                auto e = l.entries();
                e.resize(std::min(depth, e.size()));
                return RankedList(l.query_id(), std::move(e));
            };
            if (dry_run) {
                for (const auto& q : queries) {
                    auto it = run.find(q.id);
                    if (it == run.end()) {
                        continue;
                    }
                    const auto list = cut(it->second);
                    std::optional<std::size_t> kp;
                    if (auto s = pivot_scores.find(q.id); s != pivot_scores.end()) {
                        kp = insert_rank(list, s->second).position;
                    }
                    const auto plan = plan_listwise_calls(lm, list.size(), window, kp);
                    std::printf("%s  m=%zu  listwise_calls=%zu%s\n", q.id.c_str(), list.size(),
                                plan.min,
                                !plan.max ? "+"
                                          : (*plan.max != plan.min
                                                 ? (".." + std::to_string(*plan.max)).c_str()
                                                 : ""));
                }
                return 0;
            }
            std::vector<Document> corpus;
            if (!corpus_path.empty()) {
                corpus = load_documents(corpus_path);
            }
            const DocumentStore store(corpus);
            PivotCache cache;
            if (!cache_path.empty()) {
                cache.load(cache_path);
            }
            std::unique_ptr<ListwiseBackend> ranker;
            if (backend == "http") {
                auto cfg = rerank_chat.config();
                ranker = std::make_unique<HttpListwiseBackend>(cfg);
            } else {
                if (qrels_path.empty()) {
                    throw std::invalid_argument("the oracle backend needs --qrels");
                }
                auto truth = std::make_shared<OracleJudgments>(load_qrels(qrels_path), run);
                ranker = std::make_unique<OracleReranker>(truth, NoiseModel{epsilon, seed, 1});
            }
            InferenceLedger ledger;
            Run out;
            std::map<std::string, ScheduleTrace> traces;
            for (const auto& q : queries) {
                auto it = run.find(q.id);
                if (it == run.end()) {
                    continue;
                }
                const auto list = cut(it->second);
                if (list.empty()) {
                    out.emplace(q.id, list);
                    continue;
                }
                RerankContext ctx{q, store, *ranker, ledger, 1};
                std::optional<Document> pivot;
                if (uses_pivot(lm)) {
                    auto p = cached_pivot(cache, q.id, tau);
                    if (!p) {
                        throw std::invalid_argument("no cached pivot for query " + q.id
                                                    + " (run `pivotrank pivot` first)");
                    }
                    pivot = p->as_document();
                }
                ScheduleResult r = [&] {
                    switch (lm) {
                        case ListwiseMethod::Sliding: return sliding_window(ctx, list, window);
                        case ListwiseMethod::Snow: return snow(ctx, list, *pivot, window);
                        case ListwiseMethod::VsSliding: return vs_sliding(ctx, list, *pivot, window);
                        case ListwiseMethod::TdPart: return td_part(ctx, list, window, anchor_k);
                        case ListwiseMethod::GptdPart: {
                            auto s = pivot_scores.find(q.id);
                            if (s == pivot_scores.end()) {
                                throw std::invalid_argument("gptd-part needs --pivot-scores for "
                                                            + q.id);
                            }
                            return gptd_part(ctx, list, *pivot, insert_rank(list, s->second),
                                             window, anchor_k);
                        }
                    }
                    throw std::logic_error("unhandled method");
                }();
                out.emplace(q.id, std::move(r.list));
                traces.emplace(q.id, std::move(r.trace));
            }
            write_or_print(run_out, emit_trec_run(out, method));
            if (!trace_out.empty()) {
                write_file(trace_out, trace_json(traces));
            }
        } else if (eval_cmd->parsed()) {
            mcfg.ndcg_k = ndcg_k;
            mcfg.gain = gain_from_string(gain);
            const auto report = evaluate_run(load_trec_run(run_path), load_qrels(qrels_path), mcfg,
                                             label.empty() ? fs::path(run_path).stem().string()
                                                           : label);
            if (!report_out.empty()) {
                write_file(report_out, report.to_json());
            }
            std::vector<MetricReport> one{report};
            std::cout << compare_reports(one);
            if (report.queries_without_qrels > 0) {
                std::fprintf(stderr, "%zu queries without qrels were skipped\n",
                             report.queries_without_qrels);
            }
        } else if (synth_cmd->parsed()) {
            std::copy(dist.begin(), dist.end(), spec.grade_distribution.begin());
            write_synth(generate_synth(spec), synth_dir);
        } else if (exp_cmd->parsed()) {
            auto cfg = ExperimentConfig::load(config_path);
            if (!output_dir.empty()) {
                cfg.output_dir = output_dir;
            }
            if (workers > 0) {
                cfg.workers = workers;
            }
            if (dry_run) {
                std::cout << plan_experiment(cfg);
                return 0;
            }
            const auto result = run_experiment(cfg);
            std::vector<MetricReport> one{result.report};
            std::cout << compare_reports(one);
        } else if (cmp_cmd->parsed()) {
            std::vector<MetricReport> loaded;
            for (const auto& p : reports) {
                loaded.push_back(MetricReport::from_json(read_file(p)));
            }
            std::cout << compare_reports(loaded);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
