#include "pivotrank/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include <json.hpp>

#include "pivotrank/rng.hpp"
#include "pivotrank/trec_io.hpp"

namespace pivotrank {

namespace {

constexpr std::size_t kSentencesPerDoc = 4;
constexpr std::size_t kIntentTerms = 2;
constexpr std::size_t kClusterExtras = 6;

std::string make_word(Rng& rng)
{
    static constexpr std::string_view consonants = "bcdfghjklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::string w;
    const auto syllables = 2 + rng.below(3);
    for (std::uint64_t i = 0; i < syllables; ++i) {
        w += consonants[rng.below(consonants.size())];
        w += vowels[rng.below(vowels.size())];
    }
    return w;
}

// Fresh words, unique across everything drawn from `used`.
std::vector<std::string> fresh_words(Rng& rng, std::size_t n, std::set<std::string>& used)
{
    std::vector<std::string> out;
    while (out.size() < n) {
        auto w = make_word(rng);
        if (used.insert(w).second) {
            out.push_back(std::move(w));
        }
    }
    return out;
}

// Largest-remainder apportionment of n items over the distribution.
std::array<std::size_t, 4> stratify(const std::array<double, 4>& dist, std::size_t n)
{
    std::array<std::size_t, 4> counts{};
    std::array<double, 4> rem{};
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < 4; ++g) {
        const double exact = dist[g] * static_cast<double>(n);
        counts[g] = static_cast<std::size_t>(std::floor(exact));
        rem[g] = exact - static_cast<double>(counts[g]);
        assigned += counts[g];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t g = 1; g < 4; ++g) {
            if (rem[g] > rem[best]) {
                best = g;
            }
        }
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    return counts;
}

std::string sentence(std::vector<std::string> words, Rng& rng)
{
    rng.shuffle(words);
    std::string s;
    for (const auto& w : words) {
        if (!s.empty()) {
            s += ' ';
        }
        s += w;
    }
    if (!s.empty()) {
        s[0] = static_cast<char>(s[0] - 'a' + 'A');
    }
    return s + ".";
}

std::vector<std::string> draw(Rng& rng, const std::vector<std::string>& pool, std::size_t n)
{
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(pool[rng.below(pool.size())]);
    }
    return out;
}

}  // namespace

void SynthSpec::validate() const
{
    if (num_queries < 1 || m < 1) {
        throw std::invalid_argument("synth: num_queries and m must be >= 1");
    }
    if (corpus_per_query() < m) {
        throw std::invalid_argument("synth: m exceeds the corpus size per query");
    }
    double sum = 0.0;
    for (double p : grade_distribution) {
        if (!(p >= 0.0)) {
            throw std::invalid_argument("synth: grade probabilities must be non-negative");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("synth: grade probabilities must sum to 1");
    }
    if (!(quality >= 0.0 && quality <= 1.0)) {
        throw std::invalid_argument("synth: quality must lie in [0, 1]");
    }
    if (vocab_size < 10) {
        throw std::invalid_argument("synth: vocab_size must be >= 10");
    }
    if (doc_length < 1 + kIntentTerms + 1) {
        throw std::invalid_argument("synth: doc_length must be >= 4");
    }
    if (relevant_depth > m) {
        throw std::invalid_argument("synth: relevant_depth exceeds m");
    }
}

SynthData generate_synth(const SynthSpec& spec)
{
    spec.validate();
    SynthData out;
    const auto n = spec.corpus_per_query();
    const auto counts = stratify(spec.grade_distribution, n);
    const std::size_t relevant_per_query = counts[2] + counts[3];
    if (spec.relevant_depth > 0 && relevant_per_query > spec.relevant_depth) {
        throw std::invalid_argument("synth: more relevant docs per query than relevant_depth");
    }

    Rng vocab_rng(StableHash().add(spec.seed).add("vocab").value());
    std::set<std::string> used;
    const auto background = fresh_words(vocab_rng, spec.vocab_size, used);

    for (std::size_t qi = 1; qi <= spec.num_queries; ++qi) {
        char qbuf[32];
        std::snprintf(qbuf, sizeof qbuf, "q%03zu", qi);
        const std::string qid = qbuf;
        Rng rng(StableHash().add(spec.seed).add("query").add(qi).value());

        const auto cluster = fresh_words(vocab_rng, 1 + kIntentTerms + kClusterExtras, used);
        const std::vector<std::string> qterms(cluster.begin(), cluster.begin() + 1 + kIntentTerms);
        std::vector<std::string> topical(cluster.begin() + 1 + kIntentTerms, cluster.end());
        topical.insert(topical.end(), background.begin(),
                       background.begin() + static_cast<std::ptrdiff_t>(
                                                std::min<std::size_t>(background.size(), 50)));
        out.queries.push_back({qid, qterms[0] + " " + qterms[1] + " " + qterms[2]});

        std::vector<int> grades;
        for (int g = 0; g < 4; ++g) {
            grades.insert(grades.end(), counts[static_cast<std::size_t>(g)], g);
        }
        std::vector<std::size_t> slot(n);
        std::iota(slot.begin(), slot.end(), 0);
        rng.shuffle(slot);

        struct Item {
            std::string id;
            int grade;
            double key;
            double tie;
        };
        std::vector<Item> items;
        for (std::size_t i = 0; i < n; ++i) {
            char dbuf[48];
            std::snprintf(dbuf, sizeof dbuf, "%s-d%04zu", qid.c_str(), slot[i]);
            const int g = grades[i];

            std::vector<std::string> sentences;
            for (int s = 0; s < g; ++s) {
                auto words = draw(rng, topical, spec.doc_length - qterms.size());
                words.insert(words.end(), qterms.begin(), qterms.end());
                sentences.push_back(sentence(std::move(words), rng));
            }
            if (g == 0) {
                auto words = draw(rng, background, spec.doc_length - 1);
                words.push_back(qterms[0]);
                sentences.push_back(sentence(std::move(words), rng));
            }
            while (sentences.size() < kSentencesPerDoc) {
                sentences.push_back(sentence(draw(rng, background, spec.doc_length), rng));
            }
            rng.shuffle(sentences);
            std::string text;
            for (const auto& s : sentences) {
                text += (text.empty() ? "" : " ") + s;
            }
            out.corpus.push_back({dbuf, std::move(text)});
            out.qrels.add(qid, dbuf, RelevanceGrade(g));

            // Gaussian noise (Box-Muller) is unbounded, so the run is only
            // fully grade-sorted at quality 1.
            const double u = rng.uniform();
            const double z = std::sqrt(-2.0 * std::log1p(-u)) * std::cos(2.0 * std::numbers::pi * rng.uniform());
            const double key = spec.quality * (g / 3.0) + (1.0 - spec.quality) * z;
            items.push_back({dbuf, g, key, u});
        }

        std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
            if (a.key != b.key) {
                return a.key > b.key;
            }
            if (a.tie != b.tie) {
                return a.tie > b.tie;
            }
            return a.id < b.id;
        });
        items.resize(spec.m);

        if (spec.relevant_depth > 0) {
            std::vector<Item> rel;
            std::vector<Item> rest;
            for (auto& it : items) {
                (it.grade >= 2 ? rel : rest).push_back(std::move(it));
            }
            std::vector<bool> rel_slot(spec.relevant_depth, false);
            std::fill_n(rel_slot.begin(), rel.size(), true);
            rng.shuffle(rel_slot);
            items.clear();
            std::size_t ri = 0;
            std::size_t oi = 0;
            for (std::size_t pos = 0; pos < spec.m; ++pos) {
                const bool take_rel = pos < spec.relevant_depth && rel_slot[pos];
                items.push_back(take_rel ? std::move(rel[ri++]) : std::move(rest[oi++]));
            }
        }

        std::vector<ScoredDoc> entries;
        double boundary = static_cast<double>(spec.m) + 1.0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const double score = static_cast<double>(spec.m - i);
            entries.push_back({items[i].id, score, i + 1, {}});
            if (items[i].grade >= 2) {
                boundary = score;
            }
        }
        out.run.emplace(qid, RankedList(qid, std::move(entries)));
        out.pivot_scores[qid] = boundary;
    }

    // Corpus order independent of grade.
    std::sort(out.corpus.begin(), out.corpus.end(),
              [](const Document& a, const Document& b) { return a.id < b.id; });
    return out;
}

void write_synth(const SynthData& data, const std::string& dir)
{
    std::filesystem::create_directories(dir);
    const std::filesystem::path p(dir);
    {
        std::ofstream f(p / "corpus.jsonl", std::ios::binary);
        write_documents_jsonl(f, data.corpus);
    }
    {
        std::ofstream f(p / "queries.jsonl", std::ios::binary);
        write_queries_jsonl(f, data.queries);
    }
    write_file((p / "qrels.txt").string(), emit_qrels(data.qrels));
    write_file((p / "run.txt").string(), emit_trec_run(data.run, "synth"));
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [q, s] : data.pivot_scores) {
        j[q] = s;
    }
    write_file((p / "pivot_scores.json").string(), j.dump(2) + "\n");
}

std::map<std::string, double> load_pivot_scores(const std::string& path)
{
    try {
        return nlohmann::json::parse(read_file(path)).get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

}  // namespace pivotrank
