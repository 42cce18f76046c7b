#include <gtest/gtest.h>

#include "clarify/intents.hpp"
#include "clarify/rng.hpp"
#include "support.hpp"

using namespace clarify;

namespace {

const IntentSet* find_set(const std::vector<IntentSet>& sets, const std::string& key) {
    for (const auto& s : sets)
        if (s.query_id == key) return &s;
    return nullptr;
}

std::map<std::string, std::map<std::string, double>> as_map(const std::vector<IntentSet>& sets) {
    std::map<std::string, std::map<std::string, double>> m;
    for (const auto& s : sets)
        for (const auto& i : s.items) m[s.query_id][i.text] = i.weight;
    return m;
}

}  // namespace

TEST(Reformulations, Containment) {
    const auto sets = intents_from_reformulations({{"jaguar", "jaguar car", 5}, {"jaguar", "leopard", 9}});
    ASSERT_EQ(sets.size(), 1u);
    EXPECT_EQ(sets[0].query_id, "jaguar");
    EXPECT_EQ(sets[0].source, IntentSource::reformulation);
    EXPECT_EQ(sets[0].items, (std::vector<IntentItem>{{"jaguar car", 5}}));
}

TEST(Reformulations, AggregatesThenFilters) {
    const auto sets = intents_from_reformulations({{"a b", "a b c", 1}, {"a b", "a b c", 1}, {"a b", "a b d", 1}}, 2);
    ASSERT_EQ(sets.size(), 1u);
    EXPECT_EQ(sets[0].items, (std::vector<IntentItem>{{"a b c", 2}}));
}

TEST(Reformulations, TokenLevelContainmentOnly) {
    const auto sets = intents_from_reformulations(
        {{"art", "cartoon art", 3}, {"art", "cartoon", 3}, {"art", "Art", 4}, {"new york", "york new times", 3},
         {"new york", "NEW York, times", 3}},
        1);
    const auto m = as_map(sets);
    EXPECT_EQ(m.at("art"), (std::map<std::string, double>{{"cartoon art", 3}}));
    EXPECT_EQ(m.at("new york"), (std::map<std::string, double>{{"new york times", 3}}));
    EXPECT_THROW(intents_from_reformulations({{"a", "a b", 0}}), InputError);
}

TEST(ClickTitles, Examples) {
    EXPECT_EQ(intents_from_click_titles({{"jaguar", "u1", "Jaguar Cars", 10}})[0].items,
              (std::vector<IntentItem>{{"jaguar cars", 10}}));
    EXPECT_TRUE(intents_from_click_titles({{"jaguar", "u1", "Jaguar Cars", 1}}, 2).empty());
    const auto merged = intents_from_click_titles(
        {{"jaguar", "u1", "Jaguar  Cars - Wikipedia", 2}, {"jaguar", "u2", "jaguar cars | Official Site", 3}});
    ASSERT_EQ(merged.size(), 1u);
    EXPECT_EQ(merged[0].source, IntentSource::click_title);
    EXPECT_EQ(merged[0].items, (std::vector<IntentItem>{{"jaguar cars", 5}}));
}

TEST(ClickTitles, NormalizeTitle) {
    EXPECT_EQ(normalize_title("  The  Jaguar   XF "), "the jaguar xf");
    EXPECT_EQ(normalize_title("Jaguar - Big Cats - Encyclopedia"), "jaguar big cats");
    EXPECT_EQ(normalize_title("- Site"), "site");
}

TEST(Truncate, Examples) {
    IntentSet s{"q", IntentSource::reformulation, {{"c", 2}, {"a", 5}, {"b", 3}}};
    EXPECT_EQ(truncate_intents(s, 5).items, (std::vector<IntentItem>{{"a", 5}, {"b", 3}, {"c", 2}}));
    EXPECT_EQ(truncate_intents(s, 2).items, (std::vector<IntentItem>{{"a", 5}, {"b", 3}}));
    IntentSet tie{"q", IntentSource::reformulation, {{"zed", 2}, {"top", 5}, {"alpha", 2}}};
    EXPECT_EQ(truncate_intents(tie, 2).items, (std::vector<IntentItem>{{"top", 5}, {"alpha", 2}}));
    EXPECT_THROW(truncate_intents(s, 0), InputError);
}

TEST(Truncate, Idempotent) {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        IntentSet s{"q", IntentSource::click_title, {}};
        for (int i = rng.uniform_int(0, 12); i > 0; --i)
            s.items.push_back({"t" + std::to_string(rng.uniform_int(0, 50)) + "_" + std::to_string(i),
                               static_cast<double>(rng.uniform_int(1, 4))});
        const int n = rng.uniform_int(1, 10);
        const auto once = truncate_intents(s, n);
        EXPECT_LE(once.items.size(), static_cast<std::size_t>(n));
        EXPECT_EQ(truncate_intents(once, n).items, once.items);
    }
}

TEST(Reformulations, PropertiesOnRandomLogs) {
    Rng rng(8);
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    auto phrase = [&](int len) {
        std::string s;
        for (int i = 0; i < len; ++i) s += (i ? " " : "") + words[rng.below(words.size())];
        return s;
    };
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ReformulationRecord> first, second;
        for (int i = 0; i < 40; ++i) {
            ReformulationRecord r{phrase(rng.uniform_int(1, 2)), phrase(rng.uniform_int(1, 4)), rng.uniform_int(1, 3)};
            (rng.bernoulli(0.5) ? first : second).push_back(r);
        }
        auto all = first;
        all.insert(all.end(), second.begin(), second.end());
        const auto merged = intents_from_reformulations(all, 1);
        for (const auto& s : merged) {
            for (const auto& item : s.items) {
                EXPECT_GT(item.weight, 0);
                EXPECT_TRUE(std::isfinite(item.weight));
                EXPECT_TRUE(contains_run(tokenize(item.text), tokenize(s.query_id)));
                EXPECT_NE(item.text, s.query_id);
            }
        }
        // additivity: merged log == sum of per-log weights
        auto expected = as_map(intents_from_reformulations(first, 1));
        for (const auto& [q, items] : as_map(intents_from_reformulations(second, 1)))
            for (const auto& [t, w] : items) expected[q][t] += w;
        EXPECT_EQ(as_map(merged), expected);
    }
}

TEST(QueryIds, RekeyAndGroup) {
    std::vector<Query> queries{support::query("q1", "Jaguar"), support::query("q2", "python")};
    auto sets = intents_from_reformulations({{"jaguar", "jaguar car", 3}, {"unknown", "unknown thing", 3}});
    auto titles = intents_from_click_titles({{"python", "u", "Python Snake", 4}});
    sets.insert(sets.end(), titles.begin(), titles.end());
    const auto keyed = assign_query_ids(sets, queries);
    ASSERT_EQ(keyed.size(), 2u);
    ASSERT_NE(find_set(keyed, "q1"), nullptr);
    ASSERT_NE(find_set(keyed, "q2"), nullptr);
    const auto grouped = group_intents(keyed);
    EXPECT_EQ(grouped.at("q1").reformulation.items.size(), 1u);
    EXPECT_TRUE(grouped.at("q1").click_title.items.empty());
    EXPECT_EQ(grouped.at("q1").click_title.source, IntentSource::click_title);
    EXPECT_EQ(grouped.at("q2").click_title.items[0].text, "python snake");
}

TEST(QueryIds, HistoricalClicks) {
    std::vector<Query> queries{support::query("q1", "jaguar")};
    const auto h = historical_clicks_from_titles(
        {{"Jaguar", "u1", "t", 2}, {"jaguar", "u1", "t2", 3}, {"jaguar", "u2", "t", 1}, {"other", "u3", "t", 9}},
        queries);
    EXPECT_EQ(h.size(), 1u);
    EXPECT_EQ(h.at("q1"), (UrlClicks{{"u1", 5}, {"u2", 1}}));
}

TEST(Source, RoundTrip) {
    for (auto s : {IntentSource::reformulation, IntentSource::click_title})
        EXPECT_EQ(parse_intent_source(to_string(s)), s);
    EXPECT_THROW(parse_intent_source("url"), InputError);
}
