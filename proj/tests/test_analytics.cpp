#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "clarify/analytics.hpp"
#include "clarify/rng.hpp"
#include "support.hpp"

using namespace clarify;

namespace {

std::vector<std::string> answers(int k) {
    std::vector<std::string> a;
    for (int i = 0; i < k; ++i) a.push_back("answer " + std::to_string(i));
    return a;
}

// n impressions of which `engaged` click position 1.
void add_impressions(std::vector<ImpressionRecord>& log, const std::string& pane, int n, int engaged) {
    for (int i = 0; i < n; ++i) log.push_back(support::impression(pane, i < engaged ? std::vector<int>{1} : std::vector<int>{}));
}

// Kappa from pairwise agreement, written out directly.
double kappa_oracle(const std::vector<std::vector<std::int64_t>>& m, int n) {
    double agree_pairs = 0, total_pairs = 0;
    std::vector<double> share(m[0].size(), 0.0);
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            agree_pairs += row[j] * (row[j] - 1) / 2.0;
            share[j] += row[j];
        }
        total_pairs += n * (n - 1) / 2.0;
    }
    const double p_obs = agree_pairs / total_pairs;
    double p_chance = 0;
    for (double s : share) p_chance += (s / (n * m.size())) * (s / (n * m.size()));
    return (p_obs - p_chance) / (1 - p_chance);
}

}  // namespace

TEST(Entropy, Values) {
    EXPECT_NEAR(entropy({0.5, 0.5}), std::log(2.0), 1e-15);
    EXPECT_NEAR(normalized_entropy({0.8, 0.2}), 0.7219280948873623, 1e-12);
    EXPECT_NEAR(normalized_entropy({0.2, 0.2, 0.2, 0.2, 0.2}), 1.0, 1e-12);
    EXPECT_EQ(normalized_entropy({1.0, 0.0, 0.0}), 0.0);
    EXPECT_EQ(unique_clicked_urls({{"a", 3}, {"b", 0}, {"c", 1}}), 2);
}

TEST(Breakdown, SingleBucketIsSelfRelative) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(3)), support::pane("p2", "q2", answers(3))};
    std::vector<Query> queries{support::query("q1", "jaguar"), support::query("q2", "python")};
    std::vector<ImpressionRecord> log;
    add_impressions(log, "p1", 20, 7);
    add_impressions(log, "p2", 30, 2);
    const auto t = engagement_breakdown(log, panes, queries, Dimension::answer_count);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_DOUBLE_EQ(t.rows[0].relative_engagement, 1.0);
    EXPECT_EQ(t.rows[0].impressions, 50);
}

TEST(Breakdown, RelativeToOverallRate) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(2)), support::pane("p2", "q2", answers(3))};
    std::vector<Query> queries{support::query("q1", "jaguar"), support::query("q2", "python")};
    std::vector<ImpressionRecord> log;
    add_impressions(log, "p1", 100, 10);
    add_impressions(log, "p2", 100, 30);
    const auto t = engagement_breakdown(log, panes, queries, Dimension::answer_count);
    EXPECT_DOUBLE_EQ(t.overall_rate, 0.2);
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0].bucket, "2");
    EXPECT_NEAR(t.rows[0].relative_engagement, 0.5, 1e-12);
    EXPECT_EQ(t.rows[1].bucket, "3");
    EXPECT_NEAR(t.rows[1].relative_engagement, 1.5, 1e-12);
}

TEST(Breakdown, UniformClicksLandInTopEntropyBin) {
    std::vector<ClarificationPane> panes{support::pane("flat", "q1", answers(5)),
                                         support::pane("peaked", "q2", answers(5)),
                                         support::pane("mid", "q3", answers(5))};
    std::vector<Query> queries{support::query("q1", "a"), support::query("q2", "b"), support::query("q3", "c")};
    std::vector<ImpressionRecord> log;
    for (int i = 0; i < 50; ++i) log.push_back(support::impression("flat", {i % 5 + 1}));
    for (int i = 0; i < 40; ++i) log.push_back(support::impression("peaked", {1}));
    for (int i = 0; i < 30; ++i) log.push_back(support::impression("mid", {i % 2 + 1}));
    const auto t = engagement_breakdown(log, panes, queries, Dimension::click_entropy_bin);
    ASSERT_FALSE(t.rows.empty());
    EXPECT_EQ(t.rows.back().impressions, 50);
    EXPECT_EQ(t.rows.back().bucket, "[0.8000,1.0000]");
    EXPECT_TRUE(t.rows.back().box.has_value());
}

TEST(Breakdown, EntropyBinsSkipSmallPanes) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(3))};
    std::vector<Query> queries{support::query("q1", "a")};
    std::vector<ImpressionRecord> log;
    add_impressions(log, "p1", 20, 5);
    EXPECT_THROW(engagement_breakdown(log, panes, queries, Dimension::click_entropy_bin), InputError);
}

TEST(Breakdown, UrlDimensionsNeedHistory) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(3))};
    std::vector<Query> queries{support::query("q1", "a")};
    std::vector<ImpressionRecord> log;
    add_impressions(log, "p1", 20, 5);
    EXPECT_THROW(engagement_breakdown(log, panes, queries, Dimension::unique_url_bin), InputError);
    EXPECT_THROW(engagement_breakdown(log, panes, queries, Dimension::url_entropy_bin), InputError);
    HistoricalClicks h{{"q1", {{"u1", 5}, {"u2", 5}}}};
    const auto t = engagement_breakdown(log, panes, queries, Dimension::unique_url_bin, &h);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0].bucket, "2");
}

TEST(Breakdown, MinImpressionsFilterCanEmptyTheTable) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(3))};
    std::vector<Query> queries{support::query("q1", "a")};
    std::vector<ImpressionRecord> log;
    add_impressions(log, "p1", 5, 1);
    EXPECT_THROW(engagement_breakdown(log, panes, queries, Dimension::answer_count), InputError);
}

TEST(Breakdown, WeightedRelativesAverageToOne) {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ClarificationPane> panes;
        std::vector<Query> queries;
        HistoricalClicks hist;
        std::vector<ImpressionRecord> log;
        const char* questions[] = {"which one do you mean", "what do you want to know about this", "select one"};
        for (int q = 0; q < 12; ++q) {
            const std::string qid = "q" + std::to_string(q);
            std::string text;
            for (int w = rng.uniform_int(1, 12); w > 0; --w) text += "w" + std::to_string(w) + " ";
            auto query = support::query(qid, text, rng.bernoulli(0.5) ? AmbiguityClass::ambiguous : AmbiguityClass::faceted);
            query.is_question = rng.bernoulli(0.3);
            query.traffic_class = static_cast<TrafficClass>(rng.uniform_int(0, 2));
            queries.push_back(query);
            for (int u = rng.uniform_int(0, 6); u > 0; --u) hist[qid]["u" + std::to_string(u)] = rng.uniform_int(0, 9);
            const int k = rng.uniform_int(2, 5);
            const std::string pid = "p" + std::to_string(q);
            panes.push_back(support::pane(pid, qid, answers(k), questions[rng.uniform_int(0, 2)]));
            for (int n = rng.uniform_int(5, 60); n > 0; --n) {
                std::vector<int> clicks;
                for (int pos = 1; pos <= k; ++pos)
                    if (rng.bernoulli(0.15)) clicks.push_back(pos);
                log.push_back(support::impression(pid, clicks));
            }
        }
        for (auto d : kAllDimensions) {
            BreakdownTable t;
            try {
                t = engagement_breakdown(log, panes, queries, d, &hist);
            } catch (const InputError&) {
                continue;  // e.g. no five-answer pane survived the filter
            }
            std::map<std::string, std::pair<double, double>> by_group;
            for (const auto& r : t.rows) {
                EXPECT_GT(r.impressions, 0);
                by_group[r.group].first += r.impressions * r.relative_engagement;
                by_group[r.group].second += r.impressions;
            }
            for (const auto& [g, s] : by_group) EXPECT_NEAR(s.first / s.second, 1.0, 1e-9) << to_string(d) << " " << g;
        }
    }
}

TEST(ConditionalClickByPosition, AllFirstPosition) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(5))};
    std::vector<Query> queries{support::query("q1", "a", AmbiguityClass::ambiguous)};
    std::vector<ImpressionRecord> log;
    add_impressions(log, "p1", 20, 12);
    const auto v = conditional_click_by_position(log, panes, queries, AmbiguityClass::ambiguous, 5);
    EXPECT_EQ(v, (std::vector<double>{1, 0, 0, 0, 0}));
}

TEST(ConditionalClickByPosition, AveragesOverEngagedImpressions) {
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(2)), support::pane("p2", "q2", answers(2))};
    std::vector<Query> queries{support::query("q1", "a"), support::query("q2", "b")};
    std::vector<ImpressionRecord> log;
    for (int i = 0; i < 10; ++i) log.push_back(support::impression("p1", {1}));
    for (int i = 0; i < 10; ++i) log.push_back(support::impression("p2", {2}));
    add_impressions(log, "p2", 5, 0);
    const auto v = conditional_click_by_position(log, panes, queries, AmbiguityClass::faceted, 2);
    EXPECT_NEAR(v[0], 0.5, 1e-12);
    EXPECT_NEAR(v[1], 0.5, 1e-12);
    EXPECT_THROW(conditional_click_by_position(log, panes, queries, AmbiguityClass::ambiguous, 2), InputError);
    EXPECT_THROW(conditional_click_by_position(log, panes, queries, AmbiguityClass::faceted, 4), InputError);
}

TEST(ConditionalClickByPosition, UniformUserIsFlatAndSumsToOne) {
    Rng rng(3);
    std::vector<ClarificationPane> panes{support::pane("p1", "q1", answers(4))};
    std::vector<Query> queries{support::query("q1", "a")};
    std::vector<ImpressionRecord> log;
    for (int i = 0; i < 40000; ++i) {
        std::vector<int> clicks;
        for (int pos = 1; pos <= 4; ++pos)
            if (rng.bernoulli(0.2)) clicks.push_back(pos);
        log.push_back(support::impression("p1", clicks));
    }
    const auto v = conditional_click_by_position(log, panes, queries, AmbiguityClass::faceted, 4);
    double sum = 0;
    for (double x : v) {
        EXPECT_NEAR(x, 0.25, 0.01);
        sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Dissatisfaction, Examples) {
    std::vector<ImpressionRecord> log(4);
    EXPECT_EQ(dissatisfaction_rate(log, 30), 0.0);
    for (auto& r : log) r.reformulation = Reformulation{{"x"}, 60};
    EXPECT_EQ(dissatisfaction_rate(log, 30), 1.0);
    EXPECT_EQ(dissatisfaction_rate(log, 30, 59), 0.0);

    std::vector<ImpressionRecord> dwell(2);
    dwell[0].result_clicks = {{"u", 5}};
    dwell[1].result_clicks = {{"u", 40}};
    EXPECT_EQ(dissatisfaction_rate(dwell, 30), 0.5);
    EXPECT_THROW(dissatisfaction_rate(dwell, 0), InputError);
    EXPECT_THROW(dissatisfaction_rate(dwell, 30, -1), InputError);
}

TEST(Dissatisfaction, MonotoneUnderAddingDissatisfied) {
    Rng rng(9);
    std::vector<ImpressionRecord> log;
    for (int i = 0; i < 200; ++i) {
        ImpressionRecord r;
        if (rng.bernoulli(0.5)) r.result_clicks = {{"u", rng.uniform(0, 100)}};
        log.push_back(r);
        const double base = dissatisfaction_rate(log, 30);
        EXPECT_GE(base, 0.0);
        EXPECT_LE(base, 1.0);
        ImpressionRecord bad;
        bad.result_clicks = {{"u", 1}};
        log.push_back(bad);
        EXPECT_GE(dissatisfaction_rate(log, 30), base);
        log.pop_back();
    }
}

TEST(MultiClick, Examples) {
    using support::impression;
    std::vector<ImpressionRecord> single{impression("p", {1}), impression("p", {2})};
    EXPECT_EQ(multi_click_rate(single), 0.0);
    std::vector<ImpressionRecord> dbl{impression("p", {1, 2}), impression("p", {2, 3})};
    EXPECT_EQ(multi_click_rate(dbl), 1.0);
    std::vector<ImpressionRecord> mix{impression("p", {1}), impression("p", {1, 3}), impression("p", {2}),
                                      impression("p", {})};
    EXPECT_NEAR(multi_click_rate(mix), 1.0 / 3.0, 1e-15);
    mix.push_back(impression("p", {1, 2}));
    EXPECT_GT(multi_click_rate(mix), 1.0 / 3.0);
    std::vector<ImpressionRecord> none{impression("p", {})};
    EXPECT_THROW(multi_click_rate(none), std::domain_error);
}

TEST(FleissKappa, Examples) {
    EXPECT_EQ(fleiss_kappa({{3, 0}, {0, 3}, {3, 0}}, 3), 1.0);
    EXPECT_EQ(fleiss_kappa({{4, 0, 0}, {4, 0, 0}}, 4), 1.0);
    const std::vector<std::vector<std::int64_t>> m{{3, 0}, {1, 2}};
    EXPECT_NEAR(fleiss_kappa(m, 3), kappa_oracle(m, 3), 1e-12);
    EXPECT_NEAR(fleiss_kappa(m, 3), 0.25, 1e-12);
    // Observed agreement equal to chance: every item split 1/1 with balanced categories.
    EXPECT_NEAR(fleiss_kappa({{1, 1}, {1, 1}}, 2), -1.0, 1e-12);
    EXPECT_NEAR(fleiss_kappa({{2, 0}, {0, 2}, {1, 1}, {1, 1}}, 2), 0.0, 1e-12);
    EXPECT_THROW(fleiss_kappa({{3, 0}, {1, 1}}, 3), InputError);
    EXPECT_THROW(fleiss_kappa({{1, 0}}, 1), InputError);
}

TEST(FleissKappa, MatchesOracleAndIgnoresCategoryOrder) {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(2, 6), cats = rng.uniform_int(2, 4), items = rng.uniform_int(2, 10);
        std::vector<std::vector<std::int64_t>> m(items, std::vector<std::int64_t>(cats, 0));
        for (auto& row : m)
            for (int r = 0; r < n; ++r) ++row[rng.uniform_int(0, cats - 1)];
        const double k = fleiss_kappa(m, n);
        const double oracle = kappa_oracle(m, n);
        if (std::isfinite(oracle) && k < 1.0) {
            EXPECT_NEAR(k, oracle, 1e-12);
        }
        std::vector<int> perm(cats);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        auto pm = m;
        for (auto& row : pm) {
            auto orig = row;
            for (int j = 0; j < cats; ++j) row[j] = orig[perm[j]];
        }
        EXPECT_NEAR(fleiss_kappa(pm, n), k, 1e-12);
    }
}

TEST(LabelDistribution, Shares) {
    std::vector<PaneLabels> labels{{"a", Grade::Good, {Grade::Good, Grade::Bad}},
                                   {"b", Grade::Bad, {Grade::Fair, Grade::Fair}}};
    const auto d = label_distribution(labels);
    EXPECT_DOUBLE_EQ(d.overall[static_cast<int>(Grade::Good)], 0.5);
    EXPECT_DOUBLE_EQ(d.overall[static_cast<int>(Grade::Fair)], 0.0);
    EXPECT_DOUBLE_EQ(d.landing[static_cast<int>(Grade::Fair)], 0.5);
    EXPECT_DOUBLE_EQ(d.landing[static_cast<int>(Grade::Bad)], 0.25);
}
