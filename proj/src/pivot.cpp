#include "pivotrank/pivot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pivotrank/bm25.hpp"
#include "pivotrank/rng.hpp"

namespace pivotrank {

namespace {

constexpr const char* kPivotSystemPrompt =
    "You are an expert information retrieval judge. Your task is to generate a single document "
    "that matches a specific relevance grade for the given query.";

constexpr const char* kGradeDefinitions =
    "Relevance grade score definitions:\n"
    "0: Irrelevant; the document or passage provides no useful information for the query.\n"
    "1: Minimally relevant; offers some information related to the query, but is limited or not "
    "highly useful.\n"
    "2: Marginally relevant; partially addresses the query.\n"
    "3: Highly relevant; provides a perfect or ideal response to the query, often comprehensive "
    "and precise.";

constexpr int kOracleSentences = 4;

std::vector<std::string_view> split_words(std::string_view text)
{
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
            ++j;
        }
        if (j > i) {
            words.push_back(text.substr(i, j - i));
        }
        i = j;
    }
    return words;
}

std::set<std::string> query_terms(const Query& q)
{
    auto toks = tokenize(q.text);
    return {toks.begin(), toks.end()};
}

std::vector<std::string> without(const std::vector<std::string>& pool,
                                 const std::set<std::string>& banned)
{
    std::vector<std::string> out;
    out.reserve(pool.size());
    for (const auto& w : pool) {
        if (!banned.contains(w)) {
            out.push_back(w);
        }
    }
    return out;
}

std::string trim(std::string s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

PivotPrompt render_prompt(const Query& query, RelevanceGrade tau)
{
    std::string user;
    user += "Given the query: \"" + query.text + "\"\n";
    user += "Generate a document that would be scored exactly: \"" + std::to_string(tau.value())
            + "\"\n\n";
    user += kGradeDefinitions;
    return {kPivotSystemPrompt, std::move(user), tau};
}

JudgeParseError::JudgeParseError(std::string raw)
    : std::runtime_error("cannot parse a 0-3 grade from judge output: " + raw.substr(0, 200)),
      raw_(std::move(raw))
{}

int default_max_tokens(double avgdl)
{
    return std::clamp(static_cast<int>(std::lround(2.0 * avgdl)), 200, 512);
}

RelevanceGrade parse_judge_grade(std::string_view raw)
{
    std::optional<int> last;
    std::size_t i = 0;
    while (i < raw.size()) {
        if (raw[i] >= '0' && raw[i] <= '9') {
            std::size_t j = i;
            while (j < raw.size() && raw[j] >= '0' && raw[j] <= '9') {
                ++j;
            }
            if (j - i == 1 && raw[i] <= '3') {
                last = raw[i] - '0';
            }
            i = j;
        } else {
            ++i;
        }
    }
    if (!last) {
        throw JudgeParseError(std::string(raw));
    }
    return RelevanceGrade(*last);
}

PivotDocument generate_pivot(const PivotGenerator& generator, const Query& query,
                             RelevanceGrade tau, LengthBounds bounds, InferenceLedger& ledger,
                             int attempt)
{
    if (bounds.min_tokens < 1 || bounds.max_tokens < bounds.min_tokens) {
        throw std::invalid_argument("pivot length bounds need 1 <= min <= max");
    }
    const auto prompt = render_prompt(query, tau);
    std::string text = generator.generate(query, prompt, bounds.max_tokens, attempt);
    ledger.record(query.id, CallKind::PivotGen);
    text = trim(std::move(text));
    if (text.empty()) {
        throw std::runtime_error("empty completion from pivot generator " + generator.id());
    }
    auto words = split_words(text);
    if (words.size() > static_cast<std::size_t>(bounds.max_tokens)) {
        const auto& last = words[static_cast<std::size_t>(bounds.max_tokens) - 1];
        text = text.substr(0, static_cast<std::size_t>(last.data() + last.size() - text.data()));
        words.resize(static_cast<std::size_t>(bounds.max_tokens));
    }
    if (words.size() < static_cast<std::size_t>(bounds.min_tokens)) {
        throw std::runtime_error("pivot completion shorter than " + std::to_string(bounds.min_tokens)
                                 + " tokens");
    }
    PivotDocument doc;
    doc.query_id = query.id;
    doc.text = std::move(text);
    doc.tau = tau;
    doc.generator_id = generator.id();
    doc.token_estimate = static_cast<int>(words.size());
    doc.attempts = attempt + 1;
    return doc;
}

JudgeVerdict verify_pivot(const Judge& judge, const Query& query, PivotDocument& pivot,
                          InferenceLedger& ledger)
{
    std::string raw = judge.judge(query, pivot.text);
    ledger.record(query.id, CallKind::Judge);
    JudgeVerdict verdict{parse_judge_grade(raw), std::move(raw)};
    pivot.verified_grade = verdict.grade;
    return verdict;
}

PivotDocument generate_verified_pivot(const PivotGenerator& generator, const Judge& judge,
                                      const Query& query, RelevanceGrade tau,
                                      LengthBounds bounds, int max_attempts,
                                      InferenceLedger& ledger)
{
    if (max_attempts < 1) {
        throw std::invalid_argument("max_attempts must be >= 1");
    }
    std::optional<PivotDocument> best;
    int best_gap = 0;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        auto doc = generate_pivot(generator, query, tau, bounds, ledger, attempt);
        verify_pivot(judge, query, doc, ledger);
        const int gap = std::abs(doc.verified_grade->value() - tau.value());
        if (gap == 0) {
            return doc;
        }
        if (!best || gap < best_gap) {
            best = std::move(doc);
            best_gap = gap;
        }
    }
    best->attempts = max_attempts;
    return *best;
}

OracleGenerator::OracleGenerator(std::span<const Document> corpus, const Qrels& qrels,
                                 std::uint64_t seed)
    : seed_(seed)
{
    std::map<std::string, const Document*> by_id;
    std::set<std::string> vocab;
    std::size_t total_len = 0;
    for (const auto& d : corpus) {
        by_id.emplace(d.id, &d);
        auto toks = tokenize(d.text);
        total_len += toks.size();
        vocab.insert(toks.begin(), toks.end());
    }
    background_.assign(vocab.begin(), vocab.end());
    corpus_mean_length_ =
        corpus.empty() ? 0.0 : static_cast<double>(total_len) / static_cast<double>(corpus.size());

    for (const auto& [qid, judged] : qrels.all()) {
        int best = -1;
        for (const auto& [_, g] : judged) {
            best = std::max(best, g.value());
        }
        std::set<std::string> filler;
        std::size_t len_sum = 0;
        std::size_t len_n = 0;
        for (const auto& [did, g] : judged) {
            auto it = by_id.find(did);
            if (it == by_id.end()) {
                continue;
            }
            auto toks = tokenize(it->second->text);
            len_sum += toks.size();
            ++len_n;
            if (g.value() == best) {
                filler.insert(toks.begin(), toks.end());
            }
        }
        Topic topic;
        topic.filler.assign(filler.begin(), filler.end());
        topic.mean_length = len_n ? static_cast<double>(len_sum) / static_cast<double>(len_n)
                                  : corpus_mean_length_;
        topics_.emplace(qid, std::move(topic));
    }
}

std::string OracleGenerator::id() const { return "oracle:seed=" + std::to_string(seed_); }

std::string OracleGenerator::generate(const Query& query, const PivotPrompt& prompt,
                                      int max_tokens, int attempt) const
{
    const auto qterms = query_terms(query);
    if (qterms.empty()) {
        throw std::invalid_argument("query " + query.id + " has no indexable terms");
    }
    const int grade = prompt.tau.value();

    auto off_pool = without(background_, qterms);
    if (off_pool.empty()) {
        off_pool = {"lorem", "ipsum", "dolor", "sit", "amet"};
    }
    std::vector<std::string> on_pool;
    double target = corpus_mean_length_;
    if (auto t = topics_.find(query.id); t != topics_.end()) {
        on_pool = without(t->second.filler, qterms);
        target = t->second.mean_length;
    }
    if (on_pool.empty()) {
        on_pool = off_pool;
    }

    target = std::min(target, static_cast<double>(max_tokens));
    const auto per_sentence = std::max<std::size_t>(
        qterms.size() + 1, static_cast<std::size_t>(target / kOracleSentences));

    Rng rng(StableHash()
                .add(seed_)
                .add(query.id)
                .add(static_cast<std::uint64_t>(grade))
                .add(static_cast<std::uint64_t>(attempt))
                .value());
    std::vector<bool> on_topic(kOracleSentences, false);
    std::fill_n(on_topic.begin(), grade, true);
    rng.shuffle(on_topic);

    std::string text;
    for (bool on : on_topic) {
        std::vector<std::string> words;
        if (on) {
            words.assign(qterms.begin(), qterms.end());
            while (words.size() < per_sentence) {
                words.push_back(on_pool[rng.below(on_pool.size())]);
            }
            rng.shuffle(words);
        } else {
            while (words.size() < per_sentence) {
                words.push_back(off_pool[rng.below(off_pool.size())]);
            }
        }
        if (!text.empty()) {
            text += ' ';
        }
        for (std::size_t i = 0; i < words.size(); ++i) {
            text += (i ? " " : "") + words[i];
        }
        text += '.';
    }
    return text;
}

std::string OracleJudge::judge(const Query& query, const std::string& text) const
{
    const auto qterms = query_terms(query);
    int on_topic = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find_first_of(".!?\n", start);
        if (end == std::string::npos) {
            end = text.size();
        }
        auto toks = tokenize(std::string_view(text).substr(start, end - start));
        std::set<std::string> present(toks.begin(), toks.end());
        if (!qterms.empty() && std::includes(present.begin(), present.end(), qterms.begin(),
                                              qterms.end())) {
            ++on_topic;
        }
        start = end + 1;
    }
    return "score: " + std::to_string(std::min(on_topic, 3));
}

HttpPivotGenerator::HttpPivotGenerator(ChatConfig cfg) : client_(std::move(cfg)) {}

std::string HttpPivotGenerator::id() const { return "http:" + client_.config().model; }

std::string HttpPivotGenerator::generate(const Query&, const PivotPrompt& prompt, int max_tokens,
                                         int attempt) const
{
    std::optional<std::int64_t> seed;
    if (client_.config().seed) {
        seed = *client_.config().seed + attempt;
    }
    return client_.complete({{"system", prompt.system}, {"user", prompt.user}}, max_tokens, seed);
}

HttpJudge::HttpJudge(ChatConfig cfg) : client_(std::move(cfg)) {}

std::vector<ChatMessage> HttpJudge::render(const Query& query, const std::string& text)
{
    std::string user =
        "Given a query and a passage, you must provide a score on an integer scale of 0 to 3 "
        "with the following meanings:\n"
        "0 = represent that the passage has nothing to do with the query,\n"
        "1 = represents that the passage seems related to the query but does not answer it,\n"
        "2 = represents that the passage has some answer for the query, but the answer may be a "
        "bit unclear, or hidden amongst extraneous information and\n"
        "3 = represents that the passage is dedicated to the query and contains the exact "
        "answer.\n\n"
        "Query: "
        + query.text + "\nPassage: " + text
        + "\n\nProduce only the final score as an integer, formatted as ##final score: X";
    return {{"system", "You are a search quality rater evaluating the relevance of passages."},
            {"user", std::move(user)}};
}

std::string HttpJudge::judge(const Query& query, const std::string& text) const
{
    return client_.complete(render(query, text), 16);
}

std::optional<PivotDocument> PivotCache::find(const std::string& query_id, RelevanceGrade tau,
                                              const std::string& generator_id) const
{
    std::lock_guard lock(mu_);
    auto it = docs_.find({query_id, tau.value(), generator_id});
    if (it == docs_.end()) {
        return std::nullopt;
    }
    return it->second;
}

PivotDocument PivotCache::insert(PivotDocument doc)
{
    std::lock_guard lock(mu_);
    Key key{doc.query_id, doc.tau.value(), doc.generator_id};
    auto [it, _] = docs_.try_emplace(std::move(key), std::move(doc));
    return it->second;
}

PivotDocument PivotCache::get_or_generate(const std::string& query_id, RelevanceGrade tau,
                                          const std::string& generator_id,
                                          const std::function<PivotDocument()>& make)
{
    Key key{query_id, tau.value(), generator_id};
    std::promise<PivotDocument> promise;
    {
        std::unique_lock lock(mu_);
        if (auto it = docs_.find(key); it != docs_.end()) {
            return it->second;
        }
        if (auto it = pending_.find(key); it != pending_.end()) {
            auto fut = it->second;
            lock.unlock();
            return fut.get();
        }
        pending_.emplace(key, promise.get_future().share());
    }
    try {
        auto doc = make();
        if (doc.query_id != query_id || doc.tau != tau || doc.generator_id != generator_id) {
            throw InvariantError("generated pivot does not match its cache key");
        }
        std::lock_guard lock(mu_);
        auto [it, _] = docs_.try_emplace(key, std::move(doc));
        pending_.erase(key);
        promise.set_value(it->second);
        return it->second;
    } catch (...) {
        {
            std::lock_guard lock(mu_);
            pending_.erase(key);
        }
        promise.set_exception(std::current_exception());
        throw;
    }
}

std::size_t PivotCache::size() const
{
    std::lock_guard lock(mu_);
    return docs_.size();
}

void PivotCache::load_jsonl(std::istream& in)
{
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            PivotDocument doc;
            doc.query_id = j.at("query_id").get<std::string>();
            doc.text = j.at("text").get<std::string>();
            doc.tau = RelevanceGrade(j.at("tau").get<int>());
            doc.generator_id = j.at("generator_id").get<std::string>();
            if (j.contains("verified_grade") && !j["verified_grade"].is_null()) {
                doc.verified_grade = RelevanceGrade(j["verified_grade"].get<int>());
            }
            doc.token_estimate = j.value("token_estimate", 0);
            doc.attempts = j.value("attempts", 1);
            if (doc.text.empty()) {
                throw ParseError("pivot text is empty", lineno);
            }
            insert(std::move(doc));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad pivot cache record: ") + e.what(), lineno);
        } catch (const InvariantError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
}

void PivotCache::save_jsonl(std::ostream& out) const
{
    std::lock_guard lock(mu_);
    for (const auto& [_, d] : docs_) {
        nlohmann::json j{{"query_id", d.query_id},
                         {"tau", d.tau.value()},
                         {"generator_id", d.generator_id},
                         {"text", d.text},
                         {"verified_grade", d.verified_grade
                                                ? nlohmann::json(d.verified_grade->value())
                                                : nlohmann::json(nullptr)},
                         {"token_estimate", d.token_estimate},
                         {"attempts", d.attempts}};
        out << j.dump() << '\n';
    }
}

void PivotCache::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open pivot cache " + path);
    }
    load_jsonl(in);
}

void PivotCache::save(const std::string& path) const
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write pivot cache " + path);
    }
    save_jsonl(out);
}

std::vector<PivotDocument> PivotCache::for_query(const std::string& query_id) const
{
    std::lock_guard lock(mu_);
    std::vector<PivotDocument> out;
    for (auto it = docs_.lower_bound({query_id, -1, ""});
         it != docs_.end() && std::get<0>(it->first) == query_id; ++it) {
        out.push_back(it->second);
    }
    return out;
}

}  // namespace pivotrank
