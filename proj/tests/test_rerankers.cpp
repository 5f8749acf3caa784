#include <doctest.h>

#include <algorithm>

#include "pivotrank/rerankers.hpp"
#include "support.hpp"

using namespace pivotrank;
using testsupport::graded_list;

namespace {

std::shared_ptr<OracleJudgments> truth_for(const testsupport::GradedList& g)
{
    return std::make_shared<OracleJudgments>(g.qrels, g.run);
}

}  // namespace

TEST_CASE("call kind names round trip")
{
    for (auto k : kAllCallKinds) {
        CHECK(call_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS(call_kind_from_string("nope"));
}

TEST_CASE("oracle pointwise score")
{
    // Grades [1, 3] at ranks 1, 2.
    auto g = graded_list({1, 3});
    OracleReranker oracle(truth_for(g));
    InferenceLedger ledger;
    const double s = pointwise_score(oracle, g.query, g.docs[1], ledger);
    CHECK(s == doctest::Approx(3.0 + 1.0 / 3.0).epsilon(1e-12));
    CHECK(ledger.count("q1", CallKind::Pointwise) == 1);
    pointwise_score(oracle, g.query, g.docs[0], ledger);
    CHECK(ledger.count("q1", CallKind::Pointwise) == 2);

    auto eq = graded_list({2, 0, 0, 0, 2});
    OracleReranker o2(truth_for(eq));
    CHECK(o2.score(eq.query, eq.docs[0]) > o2.score(eq.query, eq.docs[4]));
}

TEST_CASE("oracle pairwise preference")
{
    auto g = graded_list({3, 1, 0, 0, 0, 0, 2, 2});
    OracleReranker oracle(truth_for(g));
    InferenceLedger ledger;
    CHECK(&pairwise_prefer(oracle, g.query, g.docs[0], g.docs[1], ledger) == &g.docs[0]);
    // Equal grades at ranks 7 and 8: the better first-stage rank wins.
    CHECK(&pairwise_prefer(oracle, g.query, g.docs[7], g.docs[6], ledger) == &g.docs[6]);
    CHECK(ledger.count("q1", CallKind::Pairwise) == 2);

    auto tied = graded_list({0, 1, 0, 0, 0, 0, 1});
    OracleReranker o2(truth_for(tied));
    CHECK(&pairwise_prefer(o2, tied.query, tied.docs[6], tied.docs[1], ledger) == &tied.docs[1]);

    OracleReranker flipped(truth_for(g), NoiseModel{1.0, 9, 1});
    CHECK(&pairwise_prefer(flipped, g.query, g.docs[0], g.docs[1], ledger) == &g.docs[1]);
    CHECK(&pairwise_prefer(flipped, g.query, g.docs[7], g.docs[6], ledger) == &g.docs[7]);
}

TEST_CASE("pairwise rerank call counts")
{
    auto g = graded_list({0, 2, 1, 3, 2});
    OracleReranker oracle(truth_for(g));
    InferenceLedger ledger;
    auto r = pairwise_rerank(oracle, g.query, std::span(g.docs).first(1), PairwiseScheme::AllPairs,
                             ledger);
    CHECK(r.ids() == std::vector<std::string>{"d000"});
    CHECK(ledger.total(CallKind::Pairwise) == 0);

    pairwise_rerank(oracle, g.query, g.docs, PairwiseScheme::AllPairs, ledger);
    CHECK(ledger.total(CallKind::Pairwise) == 10);
    pairwise_rerank(oracle, g.query, g.docs, PairwiseScheme::SinglePass, ledger);
    CHECK(ledger.total(CallKind::Pairwise) == 14);
}

TEST_CASE("noiseless all-pairs equals brute-force sort")
{
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> grades(1 + rng.below(6));
        for (auto& x : grades) {
            x = static_cast<int>(rng.below(4));
        }
        auto g = graded_list(grades);
        OracleReranker oracle(truth_for(g));
        InferenceLedger ledger;
        auto r = pairwise_rerank(oracle, g.query, g.docs, PairwiseScheme::AllPairs, ledger);
        CHECK(r.ids() == testsupport::oracle_sorted(g));
    }
}

TEST_CASE("oracle listwise sort")
{
    auto g = graded_list({1, 3, 2});
    OracleReranker oracle(truth_for(g));
    InferenceLedger ledger;
    auto p = listwise_rank(oracle, g.query, g.docs, ledger);
    CHECK(p.order == std::vector<std::size_t>{1, 2, 0});
    CHECK(ledger.count("q1", CallKind::Listwise) == 1);
}

TEST_CASE("oracle backends agree on every window")
{
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> grades(2 + rng.below(12));
        for (auto& x : grades) {
            x = static_cast<int>(rng.below(4));
        }
        auto g = graded_list(grades);
        auto truth = truth_for(g);
        OracleReranker oracle(truth);
        std::vector<Document> window = g.docs;
        window.push_back({pivot_doc_id("q1"), "pivot"});
        rng.shuffle(window);

        auto order = oracle.rank(g.query, window);
        // Idempotent.
        std::vector<Document> sorted;
        for (auto i : order) {
            sorted.push_back(window[i]);
        }
        auto again = oracle.rank(g.query, sorted);
        for (std::size_t i = 0; i < again.size(); ++i) {
            CHECK(again[i] == i);
        }
        // Consistent with pairwise and pointwise on every pair.
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            for (std::size_t j = i + 1; j < sorted.size(); ++j) {
                CHECK(oracle.prefers_first(g.query, sorted[i], sorted[j]));
                CHECK(oracle.score(g.query, sorted[i]) > oracle.score(g.query, sorted[j]));
            }
        }
    }
}

TEST_CASE("pivot sits between grade 1 and grade 2")
{
    auto g = graded_list({1, 2});
    OracleReranker oracle(truth_for(g));
    const Document pivot{pivot_doc_id("q1"), "p"};
    std::vector<Document> w{g.docs[0], pivot, g.docs[1]};
    auto order = oracle.rank(g.query, w);
    CHECK(order == std::vector<std::size_t>{2, 1, 0});
    CHECK_THROWS(OracleJudgments(g.qrels, g.run, 1.5));
    CHECK_THROWS(OracleJudgments(g.qrels, g.run, 2.0));
}

TEST_CASE("listwise noise is reproducible and independent of call order")
{
    auto g = graded_list({3, 2, 1, 0, 0, 2, 1, 3, 0, 1});
    OracleReranker noisy(truth_for(g), NoiseModel{0.3, 5, 1});
    auto a = noisy.rank(g.query, g.docs);
    noisy.rank(g.query, std::span(g.docs).first(4));
    auto b = noisy.rank(g.query, g.docs);
    CHECK(a == b);
    CHECK(ListwisePermutation::checked(a, g.docs.size()).order.size() == g.docs.size());
    CHECK_THROWS((NoiseModel{1.5, 0, 1}.validate()));
}

TEST_CASE("listwise output parsing and repair")
{
    CHECK(parse_bracket_ids("[2] > [3] > [1]", 3) == std::vector<std::size_t>{1, 2, 0});
    auto ids = parse_bracket_ids("[2] > [2] > [1]", 3);
    CHECK(repair_permutation(ids, 3) == std::vector<std::size_t>{1, 0, 2});
    CHECK(parse_bracket_ids("[9] > [0] > [x] > [1]", 3) == std::vector<std::size_t>{0});
    CHECK(repair_permutation(std::vector<std::size_t>{}, 2) == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(ListwisePermutation::checked({0, 0}, 2), InvariantError);
}

TEST_CASE("listwise prompt rendering")
{
    auto g = graded_list({0, 1});
    auto msgs = render_listwise_messages(ListwisePrompt{}, g.query, g.docs);
    REQUIRE(msgs.size() >= 4);
    CHECK(msgs.front().role == "system");
    bool has_first = false;
    for (const auto& m : msgs) {
        has_first = has_first || m.content.find("[1]") != std::string::npos;
    }
    CHECK(has_first);
    CHECK(msgs.back().content.find("alpha beta") != std::string::npos);
}

TEST_CASE("ledger totals and modeled cost")
{
    InferenceLedger ledger({{CallKind::Listwise, 2.5}});
    ledger.record("a", CallKind::Listwise, 2);
    ledger.record("a", CallKind::PivotGen);
    ledger.record("b", CallKind::Listwise);
    CHECK(ledger.total(CallKind::Listwise) == 3);
    CHECK(ledger.modeled_cost("a") == doctest::Approx(6.0));
    CHECK(ledger.snapshot().size() == 2);
}
