#include <gtest/gtest.h>

#include <numeric>

#include "clarify/core.hpp"
#include "clarify/io.hpp"
#include "clarify/rng.hpp"
#include "support.hpp"

using namespace clarify;

TEST(EngagementRate, Examples) {
    EXPECT_DOUBLE_EQ(engagement_rate({10, 0, {0, 0}}), 0.0);
    EXPECT_DOUBLE_EQ(engagement_rate({10, 10, {10, 0}}), 1.0);
    EXPECT_DOUBLE_EQ(engagement_rate({74, 21, {21, 0}}), 21.0 / 74.0);
    EXPECT_NEAR(engagement_rate({74, 21, {21, 0}}), 0.28378, 1e-5);
}

TEST(EngagementRate, ZeroImpressionsIsDomainError) {
    EXPECT_THROW(engagement_rate({0, 0, {0, 0}}), std::domain_error);
}

TEST(EngagementRate, MonotoneInEngaged) {
    for (std::int64_t e = 0; e < 50; ++e)
        EXPECT_LT(engagement_rate({50, e, {}}), engagement_rate({50, e + 1, {}}));
}

TEST(ConditionalClicks, Examples) {
    const auto u = conditional_click_distribution({10, 0, {0, 0, 0, 0, 0}});
    for (double x : u) EXPECT_DOUBLE_EQ(x, 0.2);
    EXPECT_EQ(conditional_click_distribution({10, 7, {7, 0, 0}}), (std::vector<double>{1, 0, 0}));
    EXPECT_EQ(conditional_click_distribution({10, 4, {3, 1, 0, 0}}), (std::vector<double>{0.75, 0.25, 0, 0}));
}

TEST(ConditionalClicks, SumsToOneOnRandomCounts) {
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        const int k = rng.uniform_int(2, 5);
        EngagementStats s{1000, 0, {}};
        for (int i = 0; i < k; ++i) s.per_position_clicks.push_back(rng.bernoulli(0.3) ? 0 : rng.uniform_int(0, 1000));
        const auto d = conditional_click_distribution(s);
        ASSERT_EQ(d.size(), static_cast<std::size_t>(k));
        for (double x : d) ASSERT_GE(x, 0.0);
        ASSERT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-12);
    }
}

TEST(ValidatePane, WellFormed) {
    EXPECT_TRUE(validate_pane(support::pane("p", "q", {"a", "b", "c"})).empty());
}

TEST(ValidatePane, SixAnswers) {
    const auto v = validate_pane(support::pane("p", "q", {"a", "b", "c", "d", "e", "f"}));
    ASSERT_FALSE(v.empty());
    EXPECT_EQ(v.front().kind, "answer count");
}

TEST(ValidatePane, GapInPositions) {
    auto p = support::pane("p", "q", {"a", "b"});
    p.answers[1].position = 3;
    const auto v = validate_pane(p);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v.front().kind, "contiguity");
}

TEST(ValidatePane, EmptyTextAndSizeAreReportedTogether) {
    auto p = support::pane("p", "q", {"a", "b"});
    p.answers[0].text.clear();
    p.answers[1].render_size = 0.0;
    const auto v = validate_pane(p);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(v[0].kind, "empty text");
    EXPECT_EQ(v[1].kind, "render size");
}

TEST(Tokenize, LowercasesAndDropsPunctuation) {
    EXPECT_EQ(tokenize("What's NEW, york?"), (Tokens{"what", "s", "new", "york"}));
    EXPECT_TRUE(tokenize("  ...  ").empty());
}

TEST(Template, SevenPatternsAndOther) {
    EXPECT_EQ(classify_template(tokenize("What would you like to know about paris?")), Template::T1);
    EXPECT_EQ(classify_template(tokenize("Which paris do you mean?")), Template::T2);
    EXPECT_EQ(classify_template(tokenize("Which hotel are you looking for?")), Template::T3);
    EXPECT_EQ(classify_template(tokenize("What do you want to do with a pdf")), Template::T4);
    EXPECT_EQ(classify_template(tokenize("Who are you shopping for?")), Template::T5);
    EXPECT_EQ(classify_template(tokenize("What are you trying to do?")), Template::T6);
    EXPECT_EQ(classify_template(tokenize("Do you have a color in mind?")), Template::T7);
    EXPECT_EQ(classify_template(tokenize("Pick a size")), Template::other);
}

TEST(AccumulateStats, MultiClickCountsOnceTowardEngagement) {
    const std::vector<ClarificationPane> panes{support::pane("p", "q", {"a", "b", "c"})};
    const std::vector<ImpressionRecord> log{support::impression("p", {1, 2}), support::impression("p", {}),
                                            support::impression("p", {3})};
    const auto s = accumulate_stats(log, panes).at("p");
    EXPECT_EQ(s.impressions, 3);
    EXPECT_EQ(s.engaged_impressions, 2);
    EXPECT_EQ(s.per_position_clicks, (std::vector<std::int64_t>{1, 1, 1}));
}

TEST(AccumulateStats, RejectsOutOfRangeClick) {
    const std::vector<ClarificationPane> panes{support::pane("p", "q", {"a", "b"})};
    const std::vector<ImpressionRecord> log{support::impression("p", {3})};
    EXPECT_THROW(accumulate_stats(log, panes), InputError);
    const std::vector<ImpressionRecord> unknown{support::impression("zz", {1})};
    EXPECT_THROW(accumulate_stats(unknown, panes), InputError);
}

TEST(AccumulateStats, PerPositionNeverExceedsImpressions) {
    Rng rng(5);
    const std::vector<ClarificationPane> panes{support::pane("p", "q", {"a", "b", "c", "d"})};
    std::vector<ImpressionRecord> log;
    for (int i = 0; i < 500; ++i) {
        std::vector<int> clicks;
        for (int k = 1; k <= 4; ++k)
            if (rng.bernoulli(0.4)) clicks.push_back(k);
        log.push_back(support::impression("p", clicks));
    }
    const auto s = accumulate_stats(log, panes).at("p");
    EXPECT_LE(s.engaged_impressions, s.impressions);
    for (auto c : s.per_position_clicks) EXPECT_LE(c, s.impressions);
}

TEST(SwapVariant, SwapsAndRenumbers) {
    const auto p = support::pane("p", "q", {"a", "b", "c"});
    const auto v = with_adjacent_swap(p, 2, "p-s2");
    EXPECT_EQ(v.answers[1].text, Tokens{"c"});
    EXPECT_EQ(v.answers[2].text, Tokens{"b"});
    EXPECT_TRUE(validate_pane(v).empty());
    EXPECT_THROW(with_adjacent_swap(p, 3, "x"), InputError);
}

TEST(Json, PaneRoundTrip) {
    auto p = support::pane("p1", "q1", {"red shoes", "blue shoes"});
    p.answers[0].entity_type = "color";
    const auto back = Json(p).get<ClarificationPane>();
    EXPECT_EQ(Json(back).dump(), Json(p).dump());
}

TEST(Json, ImpressionRoundTrip) {
    ImpressionRecord r = support::impression("p1", {1, 3});
    r.timestamp = 1700000000;
    r.result_clicks.push_back({"https://a.example/x", 12.5});
    r.reformulation = Reformulation{tokenize("new query"), 40};
    const auto back = Json(r).get<ImpressionRecord>();
    EXPECT_EQ(Json(back).dump(), Json(r).dump());
}

TEST(Json, InvalidPaneIsRejected) {
    auto j = Json(support::pane("p1", "q1", {"a", "b"}));
    j["answers"][1]["position"] = 4;
    EXPECT_THROW(j.get<ClarificationPane>(), InputError);
    auto neg = Json(support::impression("p", {}));
    neg["result_clicks"] = Json::array({{{"url", "u"}, {"dwell_seconds", -1}}});
    EXPECT_THROW(neg.get<ImpressionRecord>(), InputError);
}
