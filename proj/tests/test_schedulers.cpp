#include <doctest.h>

#include <set>

#include "pivotrank/metrics.hpp"
#include "pivotrank/schedulers.hpp"
#include "support.hpp"

using namespace pivotrank;
using testsupport::graded_list;

namespace {

const Document kPivot{pivot_doc_id("q1"), "pivot text"};

struct Fixture {
    testsupport::GradedList g;
    std::shared_ptr<OracleJudgments> truth;
    OracleReranker oracle;
    DocumentStore store;
    InferenceLedger ledger;

    explicit Fixture(const std::vector<int>& grades, NoiseModel noise = {})
        : g(graded_list(grades)),
          truth(std::make_shared<OracleJudgments>(g.qrels, g.run)),
          oracle(truth, noise),
          store(g.docs)
    {}

    RerankContext ctx(std::size_t workers = 1)
    {
        return {g.query, store, oracle, ledger, workers};
    }
};

std::vector<int> zeros_with(std::size_t m, std::initializer_list<std::pair<std::size_t, int>> set)
{
    std::vector<int> grades(m, 0);
    for (auto [i, v] : set) {
        grades[i] = v;
    }
    return grades;
}

std::size_t position_of(const RankedList& l, const std::string& id)
{
    const auto ids = l.ids();
    return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
}

// Grades with between lo and hi relevant docs, the rest 0 or 1.
std::vector<int> random_grades(Rng& rng, std::size_t m, std::size_t lo, std::size_t hi)
{
    std::vector<int> grades(m);
    for (auto& x : grades) {
        x = static_cast<int>(rng.below(2));
    }
    const auto r = lo + rng.below(hi - lo + 1);
    for (std::size_t i = 0; i < r; ++i) {
        grades[i] = 2 + static_cast<int>(rng.below(2));
    }
    rng.shuffle(grades);
    return grades;
}

void check_top_matches_oracle(const RankedList& out, const testsupport::GradedList& g,
                              std::size_t k)
{
    const auto full = testsupport::oracle_sorted(g);
    const auto ids = out.ids();
    REQUIRE(ids.size() == full.size());
    CHECK(std::equal(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), full.begin()));
}

}  // namespace

TEST_CASE("window spec")
{
    CHECK_NOTHROW(WindowSpec{}.validate());
    CHECK(WindowSpec{}.max_stride() == 20);
    CHECK_THROWS(WindowSpec{20, 0, 0}.validate());
    CHECK_THROWS(WindowSpec{20, 21, 0}.validate());
    CHECK_THROWS(WindowSpec{20, 10, 25}.validate());
    CHECK_THROWS(WindowSpec{1, 1, 0}.validate());
}

TEST_CASE("call counts at m = 100, w = 20, S = 10")
{
    const WindowSpec spec;
    SUBCASE("sliding")
    {
        Fixture f(std::vector<int>(100, 0));
        auto r = sliding_window(f.ctx(), f.g.list, spec);
        CHECK(r.trace.listwise_calls == 9);
        CHECK(r.trace.batches == std::vector<std::size_t>(9, 1));
        CHECK(r.trace.windows.front().start == 81);
        CHECK(r.trace.windows.back().start == 1);
        CHECK(r.trace.windows.back().end == 20);
        CHECK(f.ledger.total(CallKind::Listwise) == 9);
    }
    SUBCASE("snow")
    {
        Fixture f(zeros_with(100, {{3, 2}, {50, 3}}));
        auto r = snow(f.ctx(), f.g.list, kPivot, spec);
        CHECK(r.trace.listwise_calls == 6);
        CHECK(r.trace.batches == std::vector<std::size_t>{5, 1});
        CHECK(r.trace.parallelizable_batches() == 2);
        CHECK(f.ledger.total(CallKind::Listwise) == 6);
    }
    SUBCASE("vs-sliding without promotions")
    {
        Fixture f(std::vector<int>(100, 1));
        auto r = vs_sliding(f.ctx(), f.g.list, kPivot, spec);
        CHECK(r.trace.listwise_calls == 5);
        std::vector<std::size_t> ends;
        for (const auto& w : r.trace.windows) {
            ends.push_back(w.end);
            CHECK(w.above_pivot == 0);
        }
        CHECK(ends == std::vector<std::size_t>{100, 80, 60, 40, 20});
    }
    SUBCASE("tdpart without promotions")
    {
        std::vector<int> grades(100, 0);
        std::fill_n(grades.begin(), 20, 3);
        Fixture f(grades);
        auto r = td_part(f.ctx(), f.g.list, spec, 10);
        CHECK(r.trace.listwise_calls == 6);
        CHECK(r.trace.batches == std::vector<std::size_t>{1, 5});
        CHECK(r.list.ids() == f.g.list.ids());
    }
    SUBCASE("gptd-part with k_p inside the top window")
    {
        Fixture f(zeros_with(100, {{60, 3}}));
        auto r = gptd_part(f.ctx(), f.g.list, kPivot, PivotRank{15, 0.0}, spec);
        CHECK(r.trace.listwise_calls == 1);
        CHECK(position_of(r.list, "d060") == 60);
    }
    SUBCASE("gptd-part with k_p = m and no promotion")
    {
        Fixture f(zeros_with(100, {{0, 3}}));
        auto r = gptd_part(f.ctx(), f.g.list, kPivot, PivotRank{100, 0.0}, spec);
        CHECK(r.trace.listwise_calls == 6);
    }
    SUBCASE("planner agrees")
    {
        CHECK(plan_listwise_calls(ListwiseMethod::Sliding, 100, spec).min == 9);
        CHECK(plan_listwise_calls(ListwiseMethod::Snow, 100, spec).min == 6);
        CHECK(plan_listwise_calls(ListwiseMethod::VsSliding, 100, spec).min == 5);
        CHECK(plan_listwise_calls(ListwiseMethod::TdPart, 100, spec).min == 6);
        CHECK(plan_listwise_calls(ListwiseMethod::GptdPart, 100, spec, 15).min == 1);
        CHECK(sliding_baseline_trace(100, spec).listwise_calls == 9);
    }
}

TEST_CASE("sliding call formula")
{
    for (std::size_t m = 1; m <= 130; ++m) {
        for (std::size_t stride : {1, 5, 7, 10, 20}) {
            const WindowSpec spec{20, stride, 0};
            Fixture f(std::vector<int>(m, 0));
            auto r = sliding_window(f.ctx(), f.g.list, spec);
            const std::size_t expected = m <= 20 ? 1 : (m - 20 + stride - 1) / stride + 1;
            CHECK(r.trace.listwise_calls == expected);
            CHECK(plan_listwise_calls(ListwiseMethod::Sliding, m, spec).min == expected);
            std::vector<bool> covered(m, false);
            for (const auto& w : r.trace.windows) {
                for (auto i = w.start; i <= w.end; ++i) {
                    covered[i - 1] = true;
                }
            }
            CHECK(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
        }
    }
}

TEST_CASE("degenerate lists")
{
    const WindowSpec spec;
    Fixture f({0, 2, 1, 3, 0, 0, 2, 1, 0, 3});
    auto full = testsupport::oracle_sorted(f.g);

    auto s = sliding_window(f.ctx(), f.g.list, spec);
    CHECK(s.trace.listwise_calls == 1);
    CHECK(s.list.ids() == full);

    auto n = snow(f.ctx(), f.g.list, kPivot, spec);
    CHECK(n.trace.listwise_calls == 2);
    CHECK(n.list.ids() == full);

    auto v = vs_sliding(f.ctx(), f.g.list, kPivot, spec);
    CHECK(v.trace.listwise_calls == 1);
    CHECK(v.list.ids() == full);

    auto t = td_part(f.ctx(), f.g.list, spec, 10);
    CHECK(t.trace.listwise_calls == 1);
    CHECK(t.list.ids() == full);

    Fixture twenty(std::vector<int>(20, 1));
    CHECK(td_part(twenty.ctx(), twenty.g.list, spec, 10).trace.listwise_calls == 1);

    CHECK_THROWS(td_part(f.ctx(), f.g.list, spec, 21));
    CHECK_THROWS(sliding_window(f.ctx(), RankedList("q1", {}), spec));
    CHECK_THROWS(sliding_window(f.ctx(), RankedList("q2", {{"x", 1.0}}), spec));
    const Document clash{"d000", ""};
    CHECK_THROWS(snow(f.ctx(), f.g.list, clash, spec));
}

TEST_CASE("sliding bubbles a deep relevant doc to the top")
{
    Fixture f(zeros_with(100, {{94, 3}}));
    auto r = sliding_window(f.ctx(), f.g.list, WindowSpec{});
    CHECK(position_of(r.list, "d094") < 20);
    CHECK(r.list.ids()[0] == "d094");
}

TEST_CASE("tdpart promotes exactly the docs that beat the anchor")
{
    std::vector<int> grades(100, 0);
    std::fill_n(grades.begin(), 20, 2);
    const std::vector<std::size_t> deep{23, 41, 58, 77, 99};
    for (auto i : deep) {
        grades[i] = 3;
    }
    Fixture f(grades);
    auto r = td_part(f.ctx(), f.g.list, WindowSpec{}, 10);
    // Anchor is the 10th doc of the reranked top window: d009.
    const auto anchor = position_of(r.list, "d009");
    for (auto i : deep) {
        CHECK(position_of(r.list, testsupport::doc_name(i)) < anchor);
    }
    CHECK(r.list.ids() == testsupport::oracle_sorted(f.g));
    CHECK(r.trace.listwise_calls == 1 + 5 + 1);
    CHECK(r.trace.batches == std::vector<std::size_t>{1, 5, 1});
}

TEST_CASE("tdpart merge depth cap")
{
    // A ranker that prefers deeper docs promotes everything at every level.
    testsupport::KeyedListwise reverse;
    auto g = graded_list(std::vector<int>(100, 0));
    for (std::size_t i = 0; i < 100; ++i) {
        reverse.key[testsupport::doc_name(i)] = static_cast<double>(i);
    }
    DocumentStore store(g.docs);
    InferenceLedger ledger;
    RerankContext ctx{g.query, store, reverse, ledger, 1};
    CHECK_THROWS_WITH(td_part(ctx, g.list, WindowSpec{}, 10, 2),
                      doctest::Contains("exceeded depth 2"));
    auto r = td_part(ctx, g.list, WindowSpec{}, 10, 10);
    CHECK(testsupport::is_permutation_of(r.list, g.list));
    CHECK(r.list.ids().front() == "d099");
}

TEST_CASE("gptd-part keeps grade-3 docs above non-relevant docs")
{
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const auto m = 1 + rng.below(120);
        std::vector<int> grades(m);
        for (auto& x : grades) {
            x = static_cast<int>(rng.below(4));
        }
        Fixture f(grades);
        const auto kp = 1 + rng.below(m + 1);
        const WindowSpec spec{2 + rng.below(25), 1, 0};
        const auto anchor = std::min<std::size_t>(10, spec.w - 1);
        auto r = gptd_part(f.ctx(), f.g.list, kPivot, PivotRank{kp, 0.0}, spec, anchor, 1000);
        CHECK(testsupport::is_permutation_of(r.list, f.g.list));
        CHECK(f.ledger.total(CallKind::Listwise) == r.trace.listwise_calls);

        std::size_t last_grade3 = 0;
        std::size_t first_low = m;
        const auto ids = r.list.ids();
        for (std::size_t i = 0; i < m; ++i) {
            const auto src = std::stoul(ids[i].substr(1));
            const int g = grades[src];
            if (g == 3 && src < kp) {
                last_grade3 = std::max(last_grade3, i + 1);
            }
            if (g <= 1) {
                first_low = std::min(first_low, i);
            }
        }
        CHECK(last_grade3 <= first_low);
        // Docs beyond max(k_p, w) keep first-stage order at the end.
        const auto deep_end = std::min(m, std::max(kp, spec.w));
        for (std::size_t i = deep_end; i < m; ++i) {
            CHECK(ids[i] == testsupport::doc_name(i));
        }
    }
}

TEST_CASE("oracle equivalence of pivot schedulers")
{
    Rng rng(2024);
    const WindowSpec spec;
    for (int trial = 0; trial < 60; ++trial) {
        const auto m = 30 + rng.below(171);
        // SNOW's final pass and VS-Sliding's carry-over hold at most w - 1
        // relevant docs; beyond that the top-10 guarantee does not apply.
        auto grades = random_grades(rng, m, 10, 19);
        Fixture f(grades);
        check_top_matches_oracle(snow(f.ctx(), f.g.list, kPivot, spec).list, f.g, 10);
        check_top_matches_oracle(vs_sliding(f.ctx(), f.g.list, kPivot, spec).list, f.g, 10);
        check_top_matches_oracle(
            gptd_part(f.ctx(), f.g.list, kPivot, PivotRank{m, 0.0}, spec).list, f.g, 10);
    }
}

TEST_CASE("pivot never appears and outputs are permutations")
{
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = 1 + rng.below(90);
        std::vector<int> grades(m);
        for (auto& x : grades) {
            x = static_cast<int>(rng.below(4));
        }
        Fixture f(grades, NoiseModel{0.3, static_cast<std::uint64_t>(trial), 1});
        const std::size_t w = 2 + rng.below(20);
        const WindowSpec spec{w, 1 + rng.below(w), 1 + rng.below(w)};
        const auto anchor = 1 + rng.below(w - 1);
        std::vector<ScheduleResult> results;
        results.push_back(sliding_window(f.ctx(), f.g.list, spec));
        results.push_back(snow(f.ctx(), f.g.list, kPivot, spec));
        results.push_back(vs_sliding(f.ctx(), f.g.list, kPivot, spec));
        results.push_back(td_part(f.ctx(), f.g.list, spec, anchor, 1000));
        results.push_back(gptd_part(f.ctx(), f.g.list, kPivot,
                                    PivotRank{1 + rng.below(m + 1), 0.0}, spec, anchor, 1000));
        std::size_t calls = 0;
        for (const auto& r : results) {
            CHECK(testsupport::is_permutation_of(r.list, f.g.list));
            CHECK(position_of(r.list, kPivot.id) == m);
            CHECK(r.trace.windows.size() == r.trace.listwise_calls);
            std::size_t batched = 0;
            for (auto b : r.trace.batches) {
                batched += b;
            }
            CHECK(batched == r.trace.listwise_calls);
            calls += r.trace.listwise_calls;
        }
        CHECK(f.ledger.total(CallKind::Listwise) == calls);
    }
}

TEST_CASE("vs-sliding fuzz")
{
    Rng rng(99);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto m = 1 + rng.below(150);
        const std::size_t w = 2 + rng.below(25);
        const WindowSpec spec{w, 1, 1 + rng.below(w)};
        testsupport::KeyedListwise ranker;
        auto g = graded_list(std::vector<int>(m, 0));
        for (std::size_t i = 0; i < m; ++i) {
            ranker.key[testsupport::doc_name(i)] = rng.uniform();
        }
        ranker.pivot_key = rng.uniform();
        DocumentStore store(g.docs);
        InferenceLedger ledger;
        RerankContext ctx{g.query, store, ranker, ledger, 1};
        auto r = vs_sliding(ctx, g.list, kPivot, spec);

        const auto& ws = r.trace.windows;
        REQUIRE(!ws.empty());
        std::vector<bool> covered(m, false);
        for (std::size_t i = 0; i < ws.size(); ++i) {
            CHECK(ws[i].stride >= 1);
            CHECK(ws[i].stride <= spec.max_stride());
            if (i > 0) {
                CHECK(ws[i].end < ws[i - 1].end);
                const auto above = ws[i - 1].above_pivot;
                const auto expect = std::max<std::size_t>(
                    1, std::min(spec.max_stride(), w > above ? w - above : 0));
                CHECK(ws[i].stride == expect);
            }
            for (auto p = ws[i].start; p <= ws[i].end; ++p) {
                covered[p - 1] = true;
            }
        }
        CHECK(ws.back().start == 1);
        CHECK(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
        CHECK(ranker.window_sizes().size() == ws.size());
    }
}

TEST_CASE("vs-sliding beats sliding when relevance is shallow")
{
    Rng rng(4);
    std::size_t vs_calls = 0;
    std::size_t sliding_calls = 0;
    double vs_ndcg = 0.0;
    double sliding_ndcg = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        // Ten relevant docs inside the top 30, grades 0/1 elsewhere.
        std::vector<int> head(30);
        for (std::size_t i = 0; i < 30; ++i) {
            head[i] = i < 10 ? 2 + static_cast<int>(rng.below(2)) : static_cast<int>(rng.below(2));
        }
        rng.shuffle(head);
        std::vector<int> grades(100);
        for (std::size_t i = 0; i < 100; ++i) {
            grades[i] = i < 30 ? head[i] : static_cast<int>(rng.below(2));
        }
        Fixture f(grades);
        auto s = sliding_window(f.ctx(), f.g.list, WindowSpec{});
        auto v = vs_sliding(f.ctx(), f.g.list, kPivot, WindowSpec{});
        CHECK(v.trace.listwise_calls < s.trace.listwise_calls);
        vs_calls += v.trace.listwise_calls;
        sliding_calls += s.trace.listwise_calls;
        vs_ndcg += ndcg_at_k(v.list, f.g.qrels, 10);
        sliding_ndcg += ndcg_at_k(s.list, f.g.qrels, 10);
    }
    CHECK(vs_calls < sliding_calls);
    CHECK(vs_ndcg / 50 >= sliding_ndcg / 50 - 0.01);
}

TEST_CASE("snow result does not depend on batch workers")
{
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto grades = random_grades(rng, 150, 5, 30);
        Fixture f(grades, NoiseModel{0.2, 3, 1});
        auto a = snow(f.ctx(1), f.g.list, kPivot, WindowSpec{});
        auto b = snow(f.ctx(8), f.g.list, kPivot, WindowSpec{});
        CHECK(a.list == b.list);
        CHECK(a.trace.windows.size() == b.trace.windows.size());
        for (std::size_t i = 0; i < a.trace.windows.size(); ++i) {
            CHECK(a.trace.windows[i].start == b.trace.windows[i].start);
            CHECK(a.trace.windows[i].above_pivot == b.trace.windows[i].above_pivot);
        }
        auto ta = td_part(f.ctx(1), f.g.list, WindowSpec{}, 10);
        auto tb = td_part(f.ctx(8), f.g.list, WindowSpec{}, 10);
        CHECK(ta.list == tb.list);
    }
}

TEST_CASE("backend errors name the window")
{
    class Failing final : public ListwiseBackend {
       public:
        std::vector<std::size_t> rank(const Query&, std::span<const Document>) const override
        {
            throw std::runtime_error("boom");
        }
    } failing;
    auto g = graded_list(std::vector<int>(30, 0));
    DocumentStore store(g.docs);
    InferenceLedger ledger;
    RerankContext ctx{g.query, store, failing, ledger, 1};
    CHECK_THROWS_WITH(sliding_window(ctx, g.list, WindowSpec{}),
                      doctest::Contains("sliding window [11, 30]: boom"));
}

TEST_CASE("method names")
{
    for (auto m : {ListwiseMethod::Sliding, ListwiseMethod::Snow, ListwiseMethod::VsSliding,
                   ListwiseMethod::TdPart, ListwiseMethod::GptdPart}) {
        CHECK(listwise_method_from_string(to_string(m)) == m);
    }
    CHECK(uses_pivot(ListwiseMethod::Snow));
    CHECK_FALSE(uses_pivot(ListwiseMethod::TdPart));
    CHECK_THROWS(listwise_method_from_string("rankgpt"));
}
