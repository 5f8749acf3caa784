#include "pivotrank/trec_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace pivotrank {

namespace {

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') {
            ++j;
        }
        if (j > i) {
            fields.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return fields;
}

template <typename T>
bool parse_number(std::string_view s, T& out)
{
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::ifstream open_in(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return in;
}

}  // namespace

Run parse_trec_run(std::istream& in)
{
    std::map<std::string, std::vector<ScoredDoc>> lists;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = split_ws(line);
        if (f.empty()) {
            continue;
        }
        if (f.size() != 6) {
            throw ParseError("expected 6 fields `qid Q0 docid rank score tag`, got "
                                 + std::to_string(f.size()),
                             lineno);
        }
        int rank = 0;
        double score = 0.0;
        if (!parse_number(f[3], rank)) {
            throw ParseError("bad rank '" + std::string(f[3]) + "'", lineno);
        }
        if (!parse_number(f[4], score) || !std::isfinite(score)) {
            throw ParseError("bad score '" + std::string(f[4]) + "'", lineno);
        }
        std::string qid(f[0]);
        std::string did(f[2]);
        if (!seen.emplace(qid, did).second) {
            throw ParseError("duplicate (" + qid + ", " + did + ")", lineno);
        }
        lists[qid].push_back({std::move(did), score, rank, {}});
    }
    Run run;
    for (auto& [qid, entries] : lists) {
        run.emplace(qid, RankedList::sorted(qid, std::move(entries)));
    }
    return run;
}

Run parse_trec_run(const std::string& text)
{
    std::istringstream in(text);
    return parse_trec_run(in);
}

void write_trec_run(std::ostream& out, const Run& run, const std::string& tag)
{
    char buf[64];
    for (const auto& [qid, list] : run) {
        // Re-sort so ties are emitted in doc id order.
        auto ordered = RankedList::sorted(qid, list.entries());
        int rank = 1;
        for (const auto& e : ordered.entries()) {
            std::snprintf(buf, sizeof(buf), "%.6f", e.score);
            out << qid << " Q0 " << e.doc_id << ' ' << rank++ << ' ' << buf << ' ' << tag << '\n';
        }
    }
}

std::string emit_trec_run(const Run& run, const std::string& tag)
{
    std::ostringstream out;
    write_trec_run(out, run, tag);
    return out.str();
}

Qrels parse_qrels(std::istream& in)
{
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = split_ws(line);
        if (f.empty()) {
            continue;
        }
        if (f.size() != 4) {
            throw ParseError("expected 4 fields `qid 0 docid grade`, got "
                                 + std::to_string(f.size()),
                             lineno);
        }
        int grade = 0;
        if (!parse_number(f[3], grade)) {
            throw ParseError("bad grade '" + std::string(f[3]) + "'", lineno);
        }
        if (grade < RelevanceGrade::kMin || grade > RelevanceGrade::kMax) {
            throw ParseError("grade out of range [0,3]: " + std::to_string(grade), lineno);
        }
        try {
            qrels.add(std::string(f[0]), std::string(f[2]), RelevanceGrade(grade));
        } catch (const InvariantError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return qrels;
}

Qrels parse_qrels(const std::string& text)
{
    std::istringstream in(text);
    return parse_qrels(in);
}

std::string emit_qrels(const Qrels& qrels)
{
    std::ostringstream out;
    for (const auto& [qid, docs] : qrels.all()) {
        for (const auto& [did, g] : docs) {
            out << qid << " 0 " << did << ' ' << g.value() << '\n';
        }
    }
    return out.str();
}

namespace {

template <typename T>
std::vector<T> read_id_text_jsonl(std::istream& in, const char* what)
{
    std::vector<T> out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string()
            || !j["text"].is_string()) {
            throw ParseError(std::string(what) + " record needs string fields id and text",
                             lineno);
        }
        T rec{j["id"].get<std::string>(), j["text"].get<std::string>()};
        if (rec.id.empty()) {
            throw ParseError("empty id", lineno);
        }
        if (!ids.insert(rec.id).second) {
            throw ParseError("duplicate id " + rec.id, lineno);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

template <typename T>
void write_id_text_jsonl(std::ostream& out, const std::vector<T>& recs)
{
    for (const auto& r : recs) {
        nlohmann::json j{{"id", r.id}, {"text", r.text}};
        out << j.dump() << '\n';
    }
}

}  // namespace

std::vector<Document> read_documents_jsonl(std::istream& in)
{
    return read_id_text_jsonl<Document>(in, "document");
}

std::vector<Query> read_queries_jsonl(std::istream& in)
{
    auto qs = read_id_text_jsonl<Query>(in, "query");
    for (const auto& q : qs) {
        if (q.text.empty()) {
            throw ParseError("query " + q.id + " has empty text");
        }
    }
    return qs;
}

void write_documents_jsonl(std::ostream& out, const std::vector<Document>& docs)
{
    write_id_text_jsonl(out, docs);
}

void write_queries_jsonl(std::ostream& out, const std::vector<Query>& queries)
{
    write_id_text_jsonl(out, queries);
}

Run load_trec_run(const std::string& path)
{
    auto in = open_in(path);
    return parse_trec_run(in);
}

Qrels load_qrels(const std::string& path)
{
    auto in = open_in(path);
    return parse_qrels(in);
}

std::vector<Document> load_documents(const std::string& path)
{
    auto in = open_in(path);
    return read_documents_jsonl(in);
}

std::vector<Query> load_queries(const std::string& path)
{
    auto in = open_in(path);
    return read_queries_jsonl(in);
}

std::string read_file(const std::string& path)
{
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << contents;
}

}  // namespace pivotrank
