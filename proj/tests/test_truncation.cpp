#include <doctest.h>

#include <cmath>
#include <limits>

#include "pivotrank/metrics.hpp"
#include "pivotrank/truncation.hpp"
#include "support.hpp"

using namespace pivotrank;
using testsupport::graded_list;

namespace {

RankedList scored(std::vector<double> scores)
{
    std::vector<ScoredDoc> e;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        e.push_back({testsupport::doc_name(i), scores[i]});
    }
    return RankedList("q1", std::move(e));
}

// Random list with grades and first-stage scores on a coarse grid so ties occur.
struct RandomCase {
    testsupport::GradedList g;
    RankedList list;
    std::vector<double> scores;
};

RandomCase random_case(Rng& rng)
{
    const auto n = 1 + rng.below(60);
    std::vector<int> grades(n);
    for (auto& x : grades) {
        x = static_cast<int>(rng.below(4));
    }
    RandomCase c{graded_list(grades), {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
        c.scores.push_back(static_cast<double>(rng.below(20)));
    }
    std::sort(c.scores.rbegin(), c.scores.rend());
    c.list = scored(c.scores);
    c.g.run["q1"] = c.list;
    return c;
}

}  // namespace

TEST_CASE("partition_dyn")
{
    auto l = scored({9, 7, 5, 3});
    auto d = partition_dyn(l, 6);
    CHECK(d.d_plus_ids == std::vector<std::string>{"d000", "d001"});
    CHECK(d.d_minus_ids == std::vector<std::string>{"d002", "d003"});
    CHECK(d.cut_depth == 2);
    CHECK(d.mode == TruncationMode::Dyn);

    CHECK(partition_dyn(l, 10).cut_depth == 0);
    CHECK(partition_dyn(l, 7).d_plus_ids == std::vector<std::string>{"d000", "d001"});
    CHECK(partition_dyn(l, 1).cut_depth == 4);

    auto f = partition_fixed(l, 3);
    CHECK(f.cut_depth == 3);
    CHECK(std::isinf(f.threshold));
    CHECK(partition_fixed(l, 10).cut_depth == 4);
}

TEST_CASE("calibrate_avg")
{
    std::map<std::string, double> scores{{"a", 5.0}, {"b", 7.0}, {"c", 100.0}};
    std::vector<std::string> cal{"a", "b"};
    auto s = calibrate_avg(cal, scores, "bm25");
    CHECK(s.theta_bar == 6.0);
    std::vector<std::string> one{"c"};
    CHECK(calibrate_avg(one, scores, "bm25").theta_bar == 100.0);
    CHECK_THROWS(calibrate_avg(std::vector<std::string>{}, scores, "bm25"));
    std::vector<std::string> missing{"z"};
    CHECK_THROWS(calibrate_avg(missing, scores, "bm25"));

    std::vector<std::string> test_ids{"c"};
    CHECK_NOTHROW(s.check_disjoint(test_ids));
    std::vector<std::string> overlap{"b"};
    CHECK_THROWS(s.check_disjoint(overlap));
    CHECK_THROWS(s.check_scorer("monot5"));

    auto back = CalibrationStats::from_json(s.to_json());
    CHECK(back.theta_bar == s.theta_bar);
    CHECK(back.calibration_query_ids == s.calibration_query_ids);
    CHECK(back.scorer_id == "bm25");

    auto l = scored({9, 7, 5, 3});
    auto avg = partition_avg(l, s.theta_bar);
    auto dyn = partition_dyn(l, s.theta_bar);
    CHECK(avg.mode == TruncationMode::Avg);
    CHECK(avg.d_plus_ids == dyn.d_plus_ids);
}

TEST_CASE("psi_rank with a pointwise oracle")
{
    auto g = graded_list({0, 3, 2, 1, 3, 0});
    auto truth = std::make_shared<OracleJudgments>(g.qrels, g.run);
    OracleReranker oracle(truth);
    DocumentStore store(g.docs);
    auto rr = TruncationReranker::pointwise(oracle);

    SUBCASE("n = 0 is the identity")
    {
        InferenceLedger ledger;
        auto out = psi_rank(g.list, partition_dyn(g.list, 100.0), g.query, store, rr, ledger);
        CHECK(out == g.list);
        CHECK(ledger.total(CallKind::Pointwise) == 0);
    }
    SUBCASE("head of three")
    {
        InferenceLedger ledger;
        // Scores are 6..1, so threshold 4 keeps d000..d002.
        auto d = partition_dyn(g.list, 4.0);
        REQUIRE(d.cut_depth == 3);
        auto out = psi_rank(g.list, d, g.query, store, rr, ledger);
        CHECK(out.ids() ==
              std::vector<std::string>{"d001", "d002", "d000", "d003", "d004", "d005"});
        CHECK(ledger.total(CallKind::Pointwise) == 3);
        CHECK(out[0].score == 6.0);
        CHECK(out[5].score == 1.0);
        CHECK(out[0].model_score.has_value());
    }
    SUBCASE("pairwise head")
    {
        InferenceLedger ledger;
        auto pr = TruncationReranker::pairwise(oracle, PairwiseScheme::AllPairs);
        auto out = psi_rank(g.list, partition_dyn(g.list, 3.0), g.query, store, pr, ledger);
        CHECK(ledger.total(CallKind::Pairwise) == 6);
        CHECK(out.ids()[0] == "d001");
    }
    SUBCASE("decision from another list")
    {
        InferenceLedger ledger;
        auto other = graded_list({1, 1});
        CHECK_THROWS(psi_rank(g.list, partition_dyn(other.list, 0.0), g.query, store, rr, ledger));
    }
}

TEST_CASE("psi_rank structure over random lists")
{
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        auto c = random_case(rng);
        auto truth = std::make_shared<OracleJudgments>(c.g.qrels, c.g.run);
        OracleReranker oracle(truth, NoiseModel{0.2, static_cast<std::uint64_t>(trial), 1});
        DocumentStore store(c.g.docs);
        auto rr = TruncationReranker::pointwise(oracle);

        const double t1 = static_cast<double>(rng.below(22)) - 1.0;
        const double t2 = t1 + static_cast<double>(rng.below(5));
        auto d1 = partition_dyn(c.list, t1);
        auto d2 = partition_dyn(c.list, t2);
        CHECK(d2.cut_depth <= d1.cut_depth);

        InferenceLedger ledger;
        auto out = psi_rank(c.list, d1, c.g.query, store, rr, ledger);
        CHECK(testsupport::is_permutation_of(out, c.list));
        CHECK(ledger.total(CallKind::Pointwise) == d1.cut_depth);
        const auto ids = out.ids();
        // The tail is the exact input tail, at the same positions.
        CHECK(std::equal(d1.d_minus_ids.begin(), d1.d_minus_ids.end(),
                         ids.begin() + static_cast<std::ptrdiff_t>(d1.cut_depth)));
        for (std::size_t i = 0; i < d1.cut_depth; ++i) {
            CHECK(c.list[i].score >= t1);
        }
        for (const auto& id : d1.d_minus_ids) {
            const auto pos = std::stoul(id.substr(1));
            CHECK(c.scores[pos] < t1);
        }
    }
}

TEST_CASE("boundary pivot reproduces the full oracle head")
{
    Rng rng(5);
    int compared = 0;
    for (int trial = 0; trial < 400; ++trial) {
        const auto n = 5 + rng.below(60);
        // Half the lists have no grade-1 docs, so the tail cannot matter to nDCG.
        const bool skip_one = trial % 2 == 0;
        std::vector<int> grades(n);
        for (auto& x : grades) {
            x = static_cast<int>(rng.below(4));
            if (skip_one && x == 1) {
                x = 0;
            }
        }
        auto g = graded_list(grades);
        auto truth = std::make_shared<OracleJudgments>(g.qrels, g.run);
        OracleReranker oracle(truth);
        DocumentStore store(g.docs);
        auto rr = TruncationReranker::pointwise(oracle);

        // List scores are n..1; put the pivot at the lowest relevant doc.
        double pivot = static_cast<double>(n) + 1.0;
        std::size_t relevant = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (grades[i] >= 2) {
                pivot = g.list[i].score;
                ++relevant;
            }
        }
        InferenceLedger ledger;
        auto out = psi_rank(g.list, partition_dyn(g.list, pivot), g.query, store, rr, ledger);
        const auto full_ids = testsupport::oracle_sorted(g);
        const auto out_ids = out.ids();
        CHECK(std::equal(out_ids.begin(), out_ids.begin() + static_cast<std::ptrdiff_t>(relevant),
                         full_ids.begin()));
        if (skip_one || relevant >= 10) {
            ++compared;
            auto full = RankedList::from_order("q1", full_ids);
            CHECK(ndcg_at_k(out, g.qrels, 10) ==
                  doctest::Approx(ndcg_at_k(full, g.qrels, 10)).epsilon(1e-12));
        }
    }
    CHECK(compared >= 200);
}

TEST_CASE("cascade")
{
    auto g = graded_list({0, 3, 2, 1, 3, 0, 2, 1});
    auto truth = std::make_shared<OracleJudgments>(g.qrels, g.run);
    OracleReranker oracle(truth);
    DocumentStore store(g.docs);
    const Document pivot{pivot_doc_id("q1"), "p"};
    const double first = 3.0;  // keeps the top 6 of scores 8..1

    SUBCASE("single stage equals psi_rank")
    {
        std::vector<CascadeStage> one{{TruncationMode::Dyn, {}, TruncationReranker::pointwise(oracle)}};
        InferenceLedger a, b;
        auto c = cascade(g.list, g.query, store, pivot, first, one, a);
        auto p = psi_rank(g.list, partition_dyn(g.list, first), g.query, store,
                          TruncationReranker::pointwise(oracle), b);
        CHECK(c.ids() == p.ids());
        CHECK(a.total(CallKind::Pointwise) == b.total(CallKind::Pointwise));
    }
    SUBCASE("two oracle stages")
    {
        std::vector<CascadeStage> two{
            {TruncationMode::Dyn, {}, TruncationReranker::pointwise(oracle)},
            {TruncationMode::Dyn, {}, TruncationReranker::pairwise(oracle, PairwiseScheme::AllPairs)}};
        InferenceLedger a, b;
        std::vector<TruncationDecision> decisions;
        auto c = cascade(g.list, g.query, store, pivot, first, two, a, &decisions);
        REQUIRE(decisions.size() == 2);
        auto single = psi_rank(g.list, partition_dyn(g.list, first), g.query, store,
                               TruncationReranker::pointwise(oracle), b);
        // Stage 2 keeps docs scoring at least the pivot's 1.75: grades 2 and 3.
        const auto n2 = decisions[1].cut_depth;
        CHECK(n2 == 3);
        const auto ci = c.ids();
        const auto si = single.ids();
        CHECK(std::equal(ci.begin(), ci.begin() + static_cast<std::ptrdiff_t>(n2), si.begin()));
        CHECK(testsupport::is_permutation_of(c, g.list));
        CHECK(a.total(CallKind::PivotScore) == 1);
        CHECK(a.total(CallKind::Pairwise) == 3);
    }
    SUBCASE("stage-2 threshold above everything is a no-op")
    {
        std::vector<CascadeStage> two{
            {TruncationMode::Dyn, {}, TruncationReranker::pointwise(oracle)},
            {TruncationMode::Avg, 1000.0, TruncationReranker::pointwise(oracle)}};
        InferenceLedger a, b;
        auto c = cascade(g.list, g.query, store, pivot, first, two, a);
        auto p = psi_rank(g.list, partition_dyn(g.list, first), g.query, store,
                          TruncationReranker::pointwise(oracle), b);
        CHECK(c.ids() == p.ids());
        CHECK(a.total(CallKind::Pointwise) == 6);
    }
    SUBCASE("errors carry the stage index")
    {
        std::vector<CascadeStage> bad{
            {TruncationMode::Dyn, {}, TruncationReranker::pointwise(oracle)},
            {TruncationMode::Avg, {}, TruncationReranker::pointwise(oracle)}};
        InferenceLedger a;
        CHECK_THROWS_WITH(cascade(g.list, g.query, store, pivot, first, bad, a),
                          doctest::Contains("stage 2"));
        CHECK_THROWS(cascade(g.list, g.query, store, pivot, first, std::span<const CascadeStage>{}, a));
    }
}
