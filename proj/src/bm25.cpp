#include "pivotrank/bm25.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "pivotrank/trec_io.hpp"

namespace pivotrank {

namespace {

constexpr const char* kFormat = "pivotrank-bm25";
constexpr int kVersion = 1;

bool is_token_byte(unsigned char c)
{
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::map<std::string, std::uint32_t> term_counts(std::string_view text)
{
    std::map<std::string, std::uint32_t> counts;
    for (auto& t : tokenize(text)) {
        ++counts[std::move(t)];
    }
    return counts;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (is_token_byte(c)) {
            cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                               : static_cast<char>(c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        tokens.push_back(std::move(cur));
    }
    return tokens;
}

Bm25Index Bm25Index::build(std::span<const Document> corpus, Bm25Params params)
{
    if (corpus.empty()) {
        throw std::invalid_argument("cannot build BM25 index over an empty corpus");
    }
    if (!(params.k1 > 0.0) || params.b < 0.0 || params.b > 1.0) {
        throw std::invalid_argument("BM25 parameters need k1 > 0 and 0 <= b <= 1");
    }
    Bm25Index index;
    index.params_ = params;
    index.doc_ids_.reserve(corpus.size());
    index.doc_lengths_.reserve(corpus.size());
    for (std::size_t ord = 0; ord < corpus.size(); ++ord) {
        const auto& doc = corpus[ord];
        auto counts = term_counts(doc.text);
        std::uint32_t len = 0;
        for (const auto& [term, tf] : counts) {
            index.postings_[term].push_back({static_cast<std::uint32_t>(ord), tf});
            len += tf;
        }
        index.doc_ids_.push_back(doc.id);
        index.doc_lengths_.push_back(len);
    }
    index.finalize();
    return index;
}

void Bm25Index::finalize()
{
    std::uint64_t total = 0;
    for (auto len : doc_lengths_) {
        total += len;
    }
    avgdl_ = static_cast<double>(total) / static_cast<double>(doc_ids_.size());
}

double Bm25Index::idf(const std::string& term) const
{
    const auto n = static_cast<double>(num_docs());
    const auto df = static_cast<double>(document_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::size_t Bm25Index::document_frequency(const std::string& term) const
{
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

const std::vector<Bm25Index::Posting>& Bm25Index::postings(const std::string& term) const
{
    static const std::vector<Posting> empty;
    auto it = postings_.find(term);
    return it == postings_.end() ? empty : it->second;
}

double Bm25Index::term_weight(double idf, std::uint32_t tf, std::uint32_t doc_len) const
{
    // avgdl == 0 only for a corpus of empty docs, where no term can match.
    const double norm = avgdl_ > 0.0 ? static_cast<double>(doc_len) / avgdl_ : 0.0;
    const double t = static_cast<double>(tf);
    return idf * t * (params_.k1 + 1.0) / (t + params_.k1 * (1.0 - params_.b + params_.b * norm));
}

RankedList Bm25Index::retrieve(const Query& query, std::size_t m) const
{
    if (m == 0) {
        throw std::invalid_argument("retrieval depth must be >= 1");
    }
    std::vector<double> acc(num_docs(), 0.0);
    std::vector<bool> hit(num_docs(), false);
    for (const auto& [term, qtf] : term_counts(query.text)) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        const double w_idf = idf(term);
        for (const auto& p : it->second) {
            acc[p.doc] += static_cast<double>(qtf) * term_weight(w_idf, p.tf, doc_lengths_[p.doc]);
            hit[p.doc] = true;
        }
    }
    std::vector<ScoredDoc> entries;
    for (std::size_t d = 0; d < acc.size(); ++d) {
        if (hit[d] && acc[d] > 0.0) {
            entries.push_back({doc_ids_[d], acc[d], {}, {}});
        }
    }
    auto cmp = [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    };
    if (entries.size() > m) {
        std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(m),
                          entries.end(), cmp);
        entries.resize(m);
    } else {
        std::sort(entries.begin(), entries.end(), cmp);
    }
    return RankedList(query.id, std::move(entries));
}

double Bm25Index::score_text(const Query& query, std::string_view text) const
{
    auto doc_counts = term_counts(text);
    std::uint32_t len = 0;
    for (const auto& [_, tf] : doc_counts) {
        len += tf;
    }
    double score = 0.0;
    for (const auto& [term, qtf] : term_counts(query.text)) {
        auto it = doc_counts.find(term);
        if (it == doc_counts.end()) {
            continue;
        }
        score += static_cast<double>(qtf) * term_weight(idf(term), it->second, len);
    }
    return score;
}

std::string Bm25Index::to_json() const
{
    using nlohmann::json;
    json docs = json::array();
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        docs.push_back({{"id", doc_ids_[i]}, {"length", doc_lengths_[i]}});
    }
    std::map<std::string, const std::vector<Posting>*> sorted_terms;
    for (const auto& [term, plist] : postings_) {
        sorted_terms.emplace(term, &plist);
    }
    json postings = json::object();
    for (const auto& [term, plist] : sorted_terms) {
        json arr = json::array();
        for (const auto& p : *plist) {
            arr.push_back({p.doc, p.tf});
        }
        postings[term] = std::move(arr);
    }
    json j{{"format", kFormat},
           {"version", kVersion},
           {"k1", params_.k1},
           {"b", params_.b},
           {"docs", std::move(docs)},
           {"postings", std::move(postings)}};
    return j.dump();
}

Bm25Index Bm25Index::from_json(const std::string& text)
{
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("index is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
        throw ParseError("unsupported index format (want pivotrank-bm25 version 1)");
    }
    Bm25Index index;
    try {
        index.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
        for (const auto& d : j.at("docs")) {
            index.doc_ids_.push_back(d.at("id").get<std::string>());
            index.doc_lengths_.push_back(d.at("length").get<std::uint32_t>());
        }
        for (const auto& [term, arr] : j.at("postings").items()) {
            auto& plist = index.postings_[term];
            for (const auto& p : arr) {
                const auto doc = p.at(0).get<std::uint32_t>();
                if (doc >= index.doc_ids_.size()) {
                    throw ParseError("posting refers to unknown doc ordinal");
                }
                plist.push_back({doc, p.at(1).get<std::uint32_t>()});
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed index: ") + e.what());
    }
    if (index.doc_ids_.empty()) {
        throw ParseError("index has no documents");
    }
    index.finalize();
    return index;
}

void Bm25Index::save(const std::string& path) const { write_file(path, to_json()); }

Bm25Index Bm25Index::load(const std::string& path) { return from_json(read_file(path)); }

PivotRank insert_rank(const RankedList& list, double pivot_score)
{
    std::size_t above = 0;
    for (const auto& e : list.entries()) {
        if (e.score >= pivot_score) {
            ++above;
        } else {
            break;
        }
    }
    return {above + 1, pivot_score};
}

}  // namespace pivotrank
