#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <sstream>

#include "clarify/formats.hpp"
#include "clarify/pipeline.hpp"
#include "clarify/report.hpp"
#include "support.hpp"

using namespace clarify;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / ("clarify_formats_" + std::string(info->name()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

template <class T>
void expect_same_json(const std::vector<T>& a, const std::vector<T>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(Json(a[i]), Json(b[i])) << i;
}

Corpus small_corpus(std::uint64_t seed = 2) {
    SynthConfig sc;
    sc.queries = 12;
    sc.panes_per_query = 2;
    return gen_corpus(sc, seed);
}

}  // namespace

TEST(JsonLines, CorpusRecordsRoundTrip) {
    TempDir dir;
    const auto c = small_corpus();
    write_jsonl(dir / "queries.jsonl", c.queries);
    write_jsonl(dir / "panes.jsonl", c.panes);
    write_jsonl(dir / "labels.jsonl", c.labels);
    expect_same_json(read_jsonl<Query>(dir / "queries.jsonl"), c.queries);
    expect_same_json(read_jsonl<ClarificationPane>(dir / "panes.jsonl"), c.panes);
    expect_same_json(read_jsonl<PaneLabels>(dir / "labels.jsonl"), c.labels);

    UserModel um;
    const auto imps = simulate_impressions(c, um, 5, 3);
    write_jsonl(dir / "impressions.jsonl", imps);
    expect_same_json(read_jsonl<ImpressionRecord>(dir / "impressions.jsonl"), imps);

    const auto stats = simulate_stats(c, um, 20, 4);
    write_stats(dir / "stats.jsonl", stats);
    const auto back = read_stats(dir / "stats.jsonl");
    ASSERT_EQ(back.size(), stats.size());
    for (const auto& [id, s] : stats) EXPECT_EQ(Json(back.at(id)), Json(s));

    const auto sets = mine_intents(c.reformulations, c.click_titles, c.queries);
    write_jsonl(dir / "intents.jsonl", sets);
    expect_same_json(read_jsonl<IntentSet>(dir / "intents.jsonl"), sets);

    std::vector<PaneTruth> truth{{"p1", 0.25, {0.5, 0.125}}};
    write_jsonl(dir / "truth.jsonl", truth);
    expect_same_json(read_jsonl<PaneTruth>(dir / "truth.jsonl"), truth);
}

TEST(JsonLines, OptionalFieldsAndDefaults) {
    const auto q = Json::parse(R"({"id":"q","text":["a","b"]})").get<Query>();
    EXPECT_FALSE(q.is_question);
    EXPECT_EQ(q.ambiguity_class, AmbiguityClass::unknown);
    EXPECT_EQ(q.traffic_class, TrafficClass::unknown);
    const auto p = Json::parse(R"({"id":"p","query_id":"q","question_text":["which","one"],
        "answers":[{"text":["x"],"position":1},{"text":["y","z"],"position":2,"entity_type":"brand"}]})")
                       .get<ClarificationPane>();
    EXPECT_EQ(p.template_id, classify_template(p.question_text));
    EXPECT_EQ(p.answers[0].render_size, default_render_size(p.answers[0].text));
    EXPECT_FALSE(p.answers[0].entity_type);
    EXPECT_EQ(*p.answers[1].entity_type, "brand");
    const auto r = Json::parse(R"({"pane_id":"p","timestamp":5,"answer_clicks":[3,1,3]})").get<ImpressionRecord>();
    EXPECT_EQ(r.answer_clicks, (std::vector<int>{1, 3}));
    EXPECT_TRUE(r.result_clicks.empty());
    EXPECT_FALSE(r.reformulation);
}

TEST(JsonLines, ErrorsNameFileAndLine) {
    TempDir dir;
    const auto path = dir / "q.jsonl";
    write_text(path, "{\"id\":\"a\",\"text\":[\"x\"]}\n\n{\"id\":\"b\",\"text\":[\"y\"]}\n{\"id\":\"c\"\n");
    EXPECT_NE(error_of([&] { read_jsonl<Query>(path); }).find("q.jsonl:4:"), std::string::npos);
    write_text(path, "{\"id\":\"a\",\"text\":[\"x\"],\"traffic_class\":\"huge\"}\n");
    EXPECT_NE(error_of([&] { read_jsonl<Query>(path); }).find("q.jsonl:1:"), std::string::npos);
    write_text(path, R"({"pane_id":"p","timestamp":0,"answer_clicks":[],"result_clicks":[{"url":"u","dwell_seconds":-1}]})"
                     "\n");
    EXPECT_NE(error_of([&] { read_jsonl<ImpressionRecord>(path); }).find("negative dwell"), std::string::npos);
    write_text(path, R"({"query_id":"q","source":"url","items":[]})"
                     "\n");
    EXPECT_NE(error_of([&] { read_jsonl<IntentSet>(path); }).find(":1:"), std::string::npos);
    write_text(path, R"({"query_id":"q","source":"reformulation","items":[{"text":"a","weight":-2}]})"
                     "\n");
    EXPECT_NE(error_of([&] { read_jsonl<IntentSet>(path); }).find("weight"), std::string::npos);
    EXPECT_NE(error_of([&] { read_jsonl<Query>(dir / "missing.jsonl"); }).find("cannot open"), std::string::npos);
}

TEST(Tsv, LogsRoundTrip) {
    TempDir dir;
    const auto c = small_corpus(5);
    write_reformulations(dir / "r.tsv", c.reformulations);
    write_click_titles(dir / "t.tsv", c.click_titles);
    write_lexicon(dir / "lex.tsv", c.entity_lexicon);
    write_swaps(dir / "s.tsv", {{"q1", "a", "b", 2}});
    const auto r = read_reformulations(dir / "r.tsv");
    ASSERT_EQ(r.size(), c.reformulations.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        EXPECT_EQ(r[i].query, c.reformulations[i].query);
        EXPECT_EQ(r[i].new_query, c.reformulations[i].new_query);
        EXPECT_EQ(r[i].freq, c.reformulations[i].freq);
    }
    const auto t = read_click_titles(dir / "t.tsv");
    ASSERT_EQ(t.size(), c.click_titles.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(t[i].title, c.click_titles[i].title);
        EXPECT_EQ(t[i].url, c.click_titles[i].url);
        EXPECT_EQ(t[i].freq, c.click_titles[i].freq);
    }
    EXPECT_EQ(read_lexicon(dir / "lex.tsv"), c.entity_lexicon);
    const auto s = read_swaps(dir / "s.tsv");
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].pane_c_prime, "b");
    EXPECT_EQ(s[0].swap_index, 2);
}

TEST(Tsv, ErrorsNameFileAndLine) {
    TempDir dir;
    const auto path = dir / "x.tsv";
    write_text(path, "# header\na\ta b\t3\r\na\tb\n");
    EXPECT_NE(error_of([&] { read_reformulations(path); }).find("x.tsv:3: expected 3"), std::string::npos);
    write_text(path, "a\ta b\t3x\n");
    EXPECT_NE(error_of([&] { read_reformulations(path); }).find("x.tsv:1: bad integer"), std::string::npos);
    write_text(path, "a\ta b\t0\n");
    EXPECT_NE(error_of([&] { read_reformulations(path); }).find("x.tsv:1:"), std::string::npos);
    write_text(path, "Jaguar  Car\tbrand\njaguar car\tanimal\n");
    EXPECT_NE(error_of([&] { read_lexicon(path); }).find("x.tsv:2: duplicate"), std::string::npos);
    write_text(path, "q\ta\tb\t5\n");
    EXPECT_NE(error_of([&] { read_swaps(path); }).find("x.tsv:1: bad swap index"), std::string::npos);
    write_text(path, "q\tu\t\t2\n");
    EXPECT_EQ(read_click_titles(path)[0].title, "");
}

TEST(Report, JsonAndTsvRoundTrip) {
    Report r;
    r.command = "analyze";
    r.values["total"] = 12;
    auto& t = r.table("breakdown", {"dimension", "count", "relative"});
    t.add({"template", 3, 0.1}).add({"size", 4, cell(std::numeric_limits<double>::quiet_NaN())});
    const auto back = Json::parse(Json(r).dump()).get<Report>();
    EXPECT_EQ(Json(back), Json(r));
    std::ostringstream a, b;
    write_table_tsv(a, r.tables[0]);
    write_table_tsv(b, back.tables[0]);
    EXPECT_EQ(a.str(), "dimension\tcount\trelative\ntemplate\t3\t0.10000000000000001\nsize\t4\tNA\n");
    EXPECT_EQ(a.str(), b.str());
    EXPECT_THROW(t.add({"short"}), InputError);

    Json bad = Json(r);
    bad["tables"][0]["name"] = "../escape";
    EXPECT_THROW(bad.get<Report>(), InputError);
    bad = Json(r);
    bad["format"] = "other";
    EXPECT_THROW(bad.get<Report>(), InputError);
    EXPECT_THROW(format_cell(Json::array()), InputError);
}

TEST(Report, DoublesRoundTripThroughText) {
    Rng rng(12);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform_int(-30, 30));
        EXPECT_EQ(std::stod(fmt_double(v)), v);
    }
}

TEST(Pipeline, SplitIsSeededAndComplete) {
    std::vector<Query> qs;
    for (int i = 0; i < 101; ++i) qs.push_back(support::query("q" + std::to_string(i), "text"));
    const auto a = split_queries(qs, 7), b = split_queries(qs, 7), c = split_queries(qs, 8);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    ASSERT_EQ(a.size(), 101u);
    std::map<QueryRole, int> counts;
    for (const auto& [id, role] : a) ++counts[role];
    EXPECT_EQ(counts[QueryRole::rlc], 50);
    EXPECT_EQ(counts[QueryRole::ranker], 25);
    EXPECT_EQ(counts[QueryRole::test], 26);
    // input order does not matter
    std::reverse(qs.begin(), qs.end());
    EXPECT_EQ(split_queries(qs, 7), a);
    EXPECT_THROW(split_queries(qs, 7, {0.8, 0.3}), InputError);
    for (auto r : {QueryRole::rlc, QueryRole::ranker, QueryRole::test}) EXPECT_EQ(parse_query_role(to_string(r)), r);
    EXPECT_THROW(parse_query_role("train"), InputError);
}

TEST(Pipeline, StageInputs) {
    const auto c = small_corpus(9);
    auto stats = simulate_stats(c, UserModel{}, 10, 1);
    const std::string dropped = c.panes[0].id;
    stats.erase(dropped);
    const auto d = dataset_from_corpus(c, stats);
    std::map<std::string, QueryRole> roles;
    for (const auto& q : d.queries) roles[q.id] = QueryRole::rlc;
    const auto triples = engagement_triples(d, roles, QueryRole::rlc);
    for (const auto& t : triples) {
        EXPECT_GE(t.panes.size(), 2u);
        for (const auto& p : t.panes) EXPECT_NE(p.id, dropped);
    }
    EXPECT_TRUE(engagement_triples(d, roles, QueryRole::test).empty());
    const auto eval = ranking_queries(d, roles, QueryRole::rlc);
    std::size_t panes = 0;
    for (const auto& q : eval) {
        panes += q.pane_ids.size();
        for (const auto& f : q.features) EXPECT_FALSE(f.rlc_score);
    }
    EXPECT_EQ(panes, d.grades.size());
    const auto rd = to_ranking_data(eval, false);
    EXPECT_EQ(rd.x.size(), panes);
    EXPECT_EQ(rd.features(), feature_names(false).size());

    const auto sets = mine_intents(c.reformulations, c.click_titles, c.queries);
    for (std::size_t i = 1; i < sets.size(); ++i)
        EXPECT_LT(std::tie(sets[i - 1].query_id, sets[i - 1].source), std::tie(sets[i].query_id, sets[i].source));
    for (const auto& s : sets) EXPECT_LE(s.items.size(), static_cast<std::size_t>(kDefaultMaxIntents));
}
