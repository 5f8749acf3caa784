#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pivotrank/bm25.hpp"
#include "pivotrank/rng.hpp"

using namespace pivotrank;

namespace {

// Independent evaluation of the scoring formula for a single-term query.
double bm25_by_hand(double n_docs, double df, double tf, double len, double avgdl, double k1,
                    double b)
{
    const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
}

}  // namespace

TEST_CASE("tokenizer")
{
    CHECK(tokenize("Hello, World! a-b") == std::vector<std::string>{"hello", "world", "a", "b"});
    CHECK(tokenize("  ").empty());
    CHECK(tokenize("caf\xc3\xa9 x").front() == "caf\xc3\xa9");
}

TEST_CASE("index statistics")
{
    std::vector<Document> one{{"d", "a b a"}};
    auto idx = Bm25Index::build(one);
    CHECK(idx.doc_length(0) == 3);
    REQUIRE(idx.postings("a").size() == 1);
    CHECK(idx.postings("a")[0].tf == 2);

    std::vector<Document> two{{"x", "a b"}, {"y", "a b c d"}};
    CHECK(Bm25Index::build(two).avgdl() == doctest::Approx(3.0));

    CHECK_THROWS(Bm25Index::build(std::vector<Document>{}));
}

TEST_CASE("retrieve matches the formula evaluated by hand")
{
    std::vector<Document> corpus{{"d1", "cat"}, {"d2", "cat cat"}, {"d3", "dog"}};
    auto idx = Bm25Index::build(corpus);
    auto r = idx.retrieve({"q", "cat"}, 2);
    REQUIRE(r.size() == 2);
    CHECK(r[0].doc_id == "d2");
    CHECK(r[1].doc_id == "d1");
    const double avgdl = 4.0 / 3.0;
    CHECK(r[0].score == doctest::Approx(bm25_by_hand(3, 2, 2, 2, avgdl, 0.9, 0.4)).epsilon(1e-12));
    CHECK(r[1].score == doctest::Approx(bm25_by_hand(3, 2, 1, 1, avgdl, 0.9, 0.4)).epsilon(1e-12));
    CHECK(r[0].score > r[1].score);

    CHECK(idx.retrieve({"q", "zebra"}, 5).empty());
    CHECK(idx.retrieve({"q", "cat"}, 100).size() == 2);
    CHECK_THROWS(idx.retrieve({"q", "cat"}, 0));
}

TEST_CASE("scores do not depend on corpus insertion order")
{
    Rng rng(3);
    const std::vector<std::string> words{"ant", "bee", "cat", "dog", "eel", "fox", "gnu"};
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Document> corpus;
        for (int i = 0; i < 25; ++i) {
            std::string text;
            const auto len = 1 + rng.below(12);
            for (std::uint64_t k = 0; k < len; ++k) {
                text += words[rng.below(words.size())] + " ";
            }
            corpus.push_back({"d" + std::to_string(i), text});
        }
        auto shuffled = corpus;
        rng.shuffle(shuffled);
        const auto a = Bm25Index::build(corpus);
        const auto b = Bm25Index::build(shuffled);
        for (const char* q : {"cat dog", "eel eel fox", "gnu ant bee cat"}) {
            CHECK(a.retrieve({"q", q}, 25) == b.retrieve({"q", q}, 25));
        }
    }
}

TEST_CASE("score_text")
{
    std::vector<Document> corpus{{"d1", "cat sat on the mat"}, {"d2", "dog ran"}, {"d3", "cat cat"}};
    auto idx = Bm25Index::build(corpus);
    const Query q{"q", "cat mat"};
    CHECK(idx.score_text(q, "nothing shared here") == 0.0);

    auto r = idx.retrieve(q, 10);
    for (const auto& e : r.entries()) {
        const auto& text = e.doc_id == "d1" ? corpus[0].text : corpus[2].text;
        CHECK(idx.score_text(q, text) == e.score);
    }
    CHECK(idx.score_text(q, "cat mat") > idx.score_text(q, "cat mat filler filler filler"));
}

TEST_CASE("insert_rank")
{
    RankedList l("q", {{"a", 9}, {"b", 7}, {"c", 5}, {"d", 3}});
    CHECK(insert_rank(l, 6).position == 3);
    CHECK(insert_rank(l, 10).position == 1);
    CHECK(insert_rank(l, 1).position == 5);
    // Ties rank ahead of the pivot.
    CHECK(insert_rank(l, 7).position == 3);
}

TEST_CASE("index JSON round trip")
{
    std::vector<Document> corpus{{"d1", "cat sat"}, {"d2", "dog"}, {"d3", "cat cat dog"}};
    auto idx = Bm25Index::build(corpus, {1.2, 0.75});
    const auto text = idx.to_json();
    auto back = Bm25Index::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.params().k1 == 1.2);
    CHECK(back.retrieve({"q", "cat dog"}, 3) == idx.retrieve({"q", "cat dog"}, 3));

    const auto path = std::filesystem::temp_directory_path() / "pivotrank_idx_test.json";
    idx.save(path.string());
    CHECK(Bm25Index::load(path.string()).to_json() == text);
    std::filesystem::remove(path);

    CHECK_THROWS(Bm25Index::from_json(R"({"format":"other","version":1})"));
}
