#include <gtest/gtest.h>

#include <cmath>

#include "clarify/bias.hpp"
#include "clarify/synthlog.hpp"
#include "support.hpp"

using namespace clarify;

namespace {

// Expected click counts at scale n, so smoothed rates sit within ~1/n of the truth.
EngagementStats exact_stats(const std::vector<double>& rates, std::int64_t n) {
    EngagementStats s;
    s.impressions = n;
    for (double r : rates) s.per_position_clicks.push_back(std::llround(r * static_cast<double>(n)));
    s.engaged_impressions = n / 2;
    return s;
}

std::vector<double> swapped(std::vector<double> v, int swap_index) {
    std::swap(v[static_cast<std::size_t>(swap_index - 1)], v[static_cast<std::size_t>(swap_index)]);
    return v;
}

struct BiasData {
    Corpus corpus;
    StatsByPane stats;
    std::vector<SwapRecord> records;
};

BiasData bias_data(const UserModel& model, int queries, int n, std::uint64_t seed) {
    SynthConfig c;
    c.queries = queries;
    c.panes_per_query = 1;
    c.swap_fraction = 1.0;
    BiasData d;
    d.corpus = gen_corpus(c, seed);
    d.stats = simulate_stats(d.corpus, model, n, seed + 1);
    const auto triples = build_swap_dataset(d.corpus.panes, &d.stats);
    d.records = make_swap_records(triples, d.corpus.panes, d.stats);
    return d;
}

UserModel size_offset(double w_offset, double w_size) {
    UserModel m;
    m.kind = UserModelKind::size_offset_logistic;
    m.w_offset = w_offset;
    m.w_size = w_size;
    return m;
}

}  // namespace

TEST(SwapDataset, FindsAdjacentTranspositionsOnly) {
    using support::pane;
    std::vector<ClarificationPane> panes{
        pane("a", "q", {"red", "green", "blue"}),
        pane("b", "q", {"green", "red", "blue"}),  // swap at 1 vs a
        pane("c", "q", {"red", "blue", "green"}),  // swap at 2 vs a
        pane("d", "q", {"blue", "green", "red"}),  // non-adjacent vs a
        pane("e", "q", {"green", "red", "blue"}, "select one"),
        pane("f", "r", {"green", "red", "blue"}),
    };
    const auto t = build_swap_dataset(panes);
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t[0], (SwapTriple{"q", "a", "b", 1, 3}));
    EXPECT_EQ(t[1], (SwapTriple{"q", "a", "c", 2, 3}));
}

TEST(SwapDataset, RespectsImpressionFilter) {
    using support::pane;
    std::vector<ClarificationPane> panes{pane("a", "q", {"x", "y"}), pane("b", "q", {"y", "x"})};
    StatsByPane stats{{"a", {5, 1, {1, 0}}}, {"b", {2, 1, {1, 0}}}};
    EXPECT_EQ(build_swap_dataset(panes, &stats, 3).size(), 0u);
    EXPECT_EQ(build_swap_dataset(panes, &stats, 2).size(), 1u);
}

TEST(SwapPoints, PairsTheSameAnswerAcrossPositions) {
    SwapTriple t{"q", "c", "cp", 2, 3};
    StatsByPane stats{{"c", {100, 50, {30, 20, 10}}}, {"cp", {200, 80, {50, 40, 5}}}};
    const auto pts = swap_points(t, stats);
    // answer C_2 sits at 3 in C' (x) and at 2 in C (y)
    EXPECT_EQ(pts[0].x_clicks, 5);
    EXPECT_EQ(pts[0].x_impressions, 200);
    EXPECT_EQ(pts[0].y_clicks, 20);
    EXPECT_EQ(pts[0].y_impressions, 100);
    // answer C_3 sits at 3 in C (x) and at 2 in C' (y)
    EXPECT_EQ(pts[1].x_clicks, 10);
    EXPECT_EQ(pts[1].y_clicks, 40);
    const auto m = pct_above_diagonal(std::vector<SwapTriple>{t}, stats);
    const auto& cell = m.at({3, 2});
    EXPECT_EQ(cell.above, 2);
    EXPECT_EQ(cell.pct(), 100.0);
}

TEST(SwapPoints, TiesAreExcludedFromThePercentage) {
    SwapTriple t{"q", "c", "cp", 1, 2};
    StatsByPane stats{{"c", {100, 0, {10, 10}}}, {"cp", {100, 0, {20, 10}}}};
    // point 1: x = 10/100 (C' pos 2), y = 10/100 (C pos 1) -> tie
    // point 2: x = 10/100 (C pos 2), y = 20/100 (C' pos 1) -> above
    const auto m = pct_above_diagonal(std::vector<SwapTriple>{t}, stats);
    const auto& cell = m.at({2, 1});
    EXPECT_EQ(cell.ties, 1);
    EXPECT_EQ(cell.above, 1);
    EXPECT_EQ(cell.below, 0);
    EXPECT_EQ(cell.pct(), 100.0);
    StatsByPane empty{{"c", {0, 0, {0, 0}}}, {"cp", {100, 0, {20, 10}}}};
    EXPECT_THROW(swap_points(t, empty), std::domain_error);
}

TEST(ScatterLine, ExactLineAndLogOdds) {
    std::vector<std::pair<double, double>> pts{{0, 1}, {1, 3}, {2, 5}};
    const auto f = fit_scatter_line(pts);
    EXPECT_NEAR(f.slope, 2.0, 1e-12);
    EXPECT_NEAR(f.intercept, 1.0, 1e-12);
    EXPECT_NEAR(log_odds(0.5), 0.0, 1e-15);
    EXPECT_NEAR(log_odds(0.8), std::log(4.0), 1e-12);
    EXPECT_THROW(log_odds(1.0), std::domain_error);
    std::vector<std::pair<double, double>> flat{{1, 1}, {1, 2}};
    EXPECT_THROW(fit_scatter_line(flat), std::domain_error);
}

TEST(SwapFeatures, HandComputed) {
    auto c = support::pane("c", "q", {"a", "b", "c"});
    c.answers[1].render_size = 30;
    c.answers[2].render_size = 10;
    EngagementStats s{98, 40, {8, 18, 48}};
    const auto f = swap_features(c, 2, s);
    EXPECT_DOUBLE_EQ(f.ctr_l, 0.19);
    EXPECT_DOUBLE_EQ(f.ctr_r, 0.49);
    EXPECT_DOUBLE_EQ(f.size_diff, 0.5);
    EXPECT_EQ(f.offset, 1);
}

TEST(Folds, QueriesStayTogether) {
    const auto d = bias_data(size_offset(-1, -1), 60, 20, 3);
    const auto folds = assign_folds(d.records, 10);
    std::map<std::string, int> seen;
    for (std::size_t k = 0; k < d.records.size(); ++k) {
        auto [it, fresh] = seen.emplace(d.records[k].triple.query_id, folds[k]);
        if (!fresh) {
            EXPECT_EQ(it->second, folds[k]);
        }
        EXPECT_GE(folds[k], 0);
        EXPECT_LT(folds[k], 10);
    }
}

TEST(Logistic, RecoversPlantedWeights) {
    Rng rng(31);
    std::vector<std::vector<double>> x;
    std::vector<double> y, w;
    for (int i = 0; i < 4000; ++i) {
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        x.push_back({a, b, 7.0});  // constant column
        y.push_back(sigmoid(0.3 + 1.5 * a - 0.8 * b));  // soft labels: exact optimum
        w.push_back(1.0 + rng.uniform());
    }
    const auto fit = fit_logistic(x, y, w);
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.weights[0], 1.5, 1e-5);
    EXPECT_NEAR(fit.weights[1], -0.8, 1e-5);
    EXPECT_EQ(fit.weights[2], 0.0);
    EXPECT_NEAR(fit.intercept, 0.3, 1e-5);
    EXPECT_NEAR(fit.predict(std::vector<double>{1.0, 1.0, 7.0}), sigmoid(1.0), 1e-5);
}

TEST(Logistic, RejectsBadInput) {
    EXPECT_THROW(fit_logistic({}, {}, {}), InputError);
    EXPECT_THROW(fit_logistic({{1.0}}, {1.5}, {1.0}), InputError);
    EXPECT_THROW(fit_logistic({{1.0}}, {0.5}, {0.0}), InputError);
    EXPECT_THROW(fit_logistic({{1.0}, {1.0, 2.0}}, {0.5, 0.5}, {1.0, 1.0}), InputError);
}

TEST(CrossEntropy, Values) {
    std::vector<double> p{0.5, 1.0}, q{0.5, 0.5};
    EXPECT_NEAR(cross_entropy(p, q), std::log(2.0), 1e-15);
    std::vector<double> bad{0.0, 0.5};
    EXPECT_THROW(cross_entropy(p, bad), std::domain_error);
    std::vector<double> short_q{0.5};
    EXPECT_THROW(cross_entropy(p, short_q), InputError);
}

TEST(ClickModels, CascadeInversionIsExactOnCascadeRates) {
    const std::vector<double> rel{0.4, 0.25, 0.6, 0.1};
    for (double cont : {0.0, 0.3}) {
        UserModel m;
        m.kind = UserModelKind::cascade;
        m.cascade_continue = cont;
        for (int i = 1; i <= 3; ++i) {
            auto c = support::pane("c", "q", {"a", "b", "c", "d"});
            auto cp = with_adjacent_swap(c, i, "cp");
            const auto rc = oracle_click_rates(m, c, rel);
            const auto rcp = oracle_click_rates(m, cp, swapped(rel, i));
            const std::int64_t n = 1'000'000'000;
            StatsByPane stats{{"c", exact_stats(rc, n)}, {"cp", exact_stats(rcp, n)}};
            std::vector<ClarificationPane> panes{c, cp};
            const auto recs = make_swap_records(std::vector<SwapTriple>{{"q", "c", "cp", i, 4}}, panes, stats);
            const auto [ql, qr] = cascade_predict(recs[0], cont);
            EXPECT_NEAR(ql, rcp[static_cast<std::size_t>(i - 1)], 1e-6) << cont << " " << i;
            EXPECT_NEAR(qr, rcp[static_cast<std::size_t>(i)], 1e-6) << cont << " " << i;
            if (cont == 0.0) {
                const auto alpha = cascade_mle(recs[0]);
                for (std::size_t k = 0; k < rel.size(); ++k) EXPECT_NEAR(alpha[k], rel[k], 1e-6);
            }
        }
    }
}

TEST(ClickModels, ExaminationRecoversExamProbs) {
    UserModel m;
    m.kind = UserModelKind::examination;
    m.exam_probs = {1.0, 0.7, 0.5, 0.35, 0.25};
    const auto d = bias_data(m, 300, 2000, 41);
    const auto fit = fit_examination(d.records);
    EXPECT_TRUE(fit.converged);
    for (const auto& [k, e] : fit.exam)
        for (int p = 0; p < k; ++p) EXPECT_NEAR(e[static_cast<std::size_t>(p)], m.exam_probs[static_cast<std::size_t>(p)], 0.03) << k << " " << p;
}

TEST(ClickModels, CascadeContinuationIsRecovered) {
    UserModel m;
    m.kind = UserModelKind::cascade;
    m.cascade_continue = 0.4;
    const auto d = bias_data(m, 300, 2000, 43);
    EXPECT_NEAR(fit_cascade_continue(d.records), 0.4, 0.05);
}

TEST(ClickModels, BestPossibleIsTheFloor) {
    const auto d = bias_data(size_offset(-1.2, -1.0), 300, 50, 11);
    const auto rows = evaluate_click_models(d.records, 5);
    ASSERT_EQ(rows.size(), kAllClickModels.size());
    for (const auto& r : rows) {
        EXPECT_EQ(r.per_fold.size(), 5u);
        EXPECT_GE(r.mean, rows[0].mean - 1e-12) << to_string(r.kind);
        EXPECT_GE(r.stddev, 0.0);
    }
    EXPECT_LT(rows[5].mean, rows[2].mean);  // logistic beats no_bias
    EXPECT_LT(rows[2].mean, rows[1].mean);  // no_bias beats blind
}

TEST(ClickLogreg, SizeSignFollowsThePlantedWeight) {
    for (double w_size : {-1.5, 1.5}) {
        const auto d = bias_data(size_offset(-1.2, w_size), 600, 50, 11);
        const auto rep = fit_click_logreg(d.records, 5);
        EXPECT_TRUE(rep.all_converged);
        // label L sees C_i's size advantage; its sign follows -w_size (C_i moves right in C')
        const double sign = w_size < 0 ? 1.0 : -1.0;
        EXPECT_GT(sign * rep.mean_l[2], 0.0) << w_size;
        EXPECT_LT(sign * rep.mean_r[2], 0.0) << w_size;
        EXPECT_LT(rep.mean_l[3], 0.0);
        EXPECT_LT(rep.mean_r[3], 0.0);
    }
}

TEST(ClickLogreg, FoldArgumentsAreChecked) {
    const auto d = bias_data(size_offset(-1, -1), 20, 20, 5);
    EXPECT_THROW(fit_click_logreg(d.records, 1), InputError);
    EXPECT_THROW(fit_click_logreg(std::span<const SwapRecord>(d.records.data(), 3), 10), InputError);
}

TEST(NullCalibration, RelevanceOnlyScatterSitsOnTheDiagonal) {
    const auto d = bias_data(UserModel{}, 1000, 2000, 13);
    std::vector<SwapTriple> triples;
    for (const auto& r : d.records) triples.push_back(r.triple);
    const auto pts = all_swap_points(triples, d.stats);
    std::int64_t above = 0, below = 0;
    for (const auto& [key, cell] : pct_above_diagonal(triples, d.stats)) above += cell.above, below += cell.below;
    EXPECT_NEAR(100.0 * above / static_cast<double>(above + below), 50.0, 3.0);
    const auto fit = fit_scatter_line(log_odds_points(pts));
    EXPECT_NEAR(fit.slope, 1.0, 0.05);
}
