#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clarify/io.hpp"
#include "clarify/report.hpp"

#ifndef CLARIFY_BIN
#error "CLARIFY_BIN must name the clarify executable"
#endif

namespace fs = std::filesystem;
using clarify::Json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "clarify_cli_tests";

struct Result {
    int code = -1;
    std::string err;
};

Result run(const std::string& args, const std::string& env = "") {
    fs::create_directories(kRoot);
    const auto err = kRoot / "stderr.txt";
    const std::string cmd = env + " " + std::string(CLARIFY_BIN) + " " + args + " >" + (kRoot / "stdout.txt").string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const fs::path& p) {
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

Json json_file(const fs::path& p) { return Json::parse(slurp(p)); }

// Every file of two directories, compared byte for byte.
void expect_same_tree(const fs::path& a, const fs::path& b) {
    std::set<std::string> na, nb;
    for (const auto& e : fs::directory_iterator(a)) na.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(b)) nb.insert(e.path().filename().string());
    EXPECT_EQ(na, nb);
    for (const auto& n : na) EXPECT_EQ(slurp(a / n), slurp(b / n)) << n;
}

std::string dir(const std::string& name) {
    const auto p = kRoot / name;
    fs::remove_all(p);
    return p.string();
}

// Small corpus shared by the model-stage tests.
const std::string& corpus() {
    static const std::string d = [] {
        const auto path = dir("corpus");
        const auto r = run("synth-gen --seed 4 --queries 40 --panes-per-query 3 --swap-fraction 0 --relevance-mode intent "
                           "--impressions 60 -o " +
                           path);
        if (r.code != 0) throw std::runtime_error("synth-gen failed: " + r.err);
        const auto ri = run("intents --data " + path + " -o " + path);
        if (ri.code != 0) throw std::runtime_error("intents failed: " + ri.err);
        return path;
    }();
    return d;
}

const std::string kTinyRlc = "--dim 8 --heads 2 --ff-dim 16 --steps 20 --lr 1e-3 --warmup 2 --seed 3";

}  // namespace

TEST(Cli, SynthGenThenAnalyze) {
    const auto out = dir("synth");
    ASSERT_EQ(run("synth-gen --seed 2 --queries 15 --panes-per-query 2 --impressions 30 -o " + out).code, 0);
    for (const char* f : {"queries.jsonl", "panes.jsonl", "impressions.jsonl", "labels.jsonl", "stats.jsonl", "truth.jsonl",
                          "reformulations.tsv", "click_titles.tsv", "lexicon.tsv", "swaps.tsv", "report.json",
                          "corpus_summary.tsv", "manifest.json"})
        EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;
    EXPECT_EQ(lines(fs::path(out) / "queries.jsonl"), 15u);
    const std::size_t panes = lines(fs::path(out) / "panes.jsonl");
    EXPECT_EQ(lines(fs::path(out) / "impressions.jsonl"), 30 * panes);

    const auto an = dir("analyze");
    ASSERT_EQ(run("analyze --data " + out + " --min-impressions 1 -o " + an).code, 0);
    clarify::Report rep = json_file(fs::path(an) / "report.json").get<clarify::Report>();
    EXPECT_EQ(rep.command, "analyze");
    bool found = false;
    for (const auto& t : rep.tables)
        if (t.name == "summary")
            for (const auto& row : t.rows)
                if (row[0] == "impressions") {
                    found = true;
                    EXPECT_EQ(row[1].get<std::size_t>(), 30 * panes);
                }
    EXPECT_TRUE(found);
    EXPECT_TRUE(fs::exists(fs::path(an) / "breakdown_template.tsv"));
    const auto m = json_file(fs::path(an) / "manifest.json");
    EXPECT_EQ(m["command"], "analyze");
    EXPECT_TRUE(m["seed"].is_null());
    EXPECT_EQ(m["inputs"].size(), 5u);
    EXPECT_EQ(m["inputs"][0]["fnv1a64"].get<std::string>().size(), 16u);
}

TEST(Cli, RerunsAreByteIdentical) {
    const auto a = dir("det_a"), b = dir("det_b");
    const std::string args = "synth-gen --seed 9 --queries 12 --impressions 20 ";
    ASSERT_EQ(run(args + "--threads 1 -o " + a).code, 0);
    ASSERT_EQ(run(args + "--threads 3 -o " + b).code, 0);
    expect_same_tree(a, b);
    const auto c = dir("det_c");
    ASSERT_EQ(run("synth-gen --seed 10 --queries 12 --impressions 20 -o " + c).code, 0);
    EXPECT_NE(slurp(fs::path(a) / "impressions.jsonl"), slurp(fs::path(c) / "impressions.jsonl"));
}

TEST(Cli, StatsOnlyMatchesImpressionCounts) {
    const auto a = dir("stats_full"), b = dir("stats_only");
    ASSERT_EQ(run("synth-gen --seed 5 --queries 6 --impressions 25 -o " + a).code, 0);
    ASSERT_EQ(run("synth-gen --seed 5 --queries 6 --impressions 25 --stats-only -o " + b).code, 0);
    EXPECT_FALSE(fs::exists(fs::path(b) / "impressions.jsonl"));
    EXPECT_EQ(lines(fs::path(b) / "stats.jsonl"), lines(fs::path(a) / "stats.jsonl"));
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run("--version").code, 0);
    EXPECT_EQ(run("analyze --help").code, 0);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("synth-gen --queries 3").code, 1);  // --seed is required
    EXPECT_EQ(run("synth-gen --seed 1 --queries -3 -o " + dir("neg")).code, 1);
    EXPECT_EQ(run("synth-gen --seed 1 --user-model psychic -o " + dir("um")).code, 1);
    const auto r = run("analyze --data " + dir("nowhere") + " -o " + dir("x"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("missing input file"), std::string::npos);
    EXPECT_FALSE(fs::exists(kRoot / "x"));
}

TEST(Cli, MalformedInputNamesTheLine) {
    const auto src = dir("bad_src");
    ASSERT_EQ(run("synth-gen --seed 2 --queries 5 --impressions 5 -o " + src).code, 0);
    {
        std::ofstream(fs::path(src) / "impressions.jsonl", std::ios::app) << "{\"pane_id\": \"p\", \"timestamp\": \n";
    }
    const std::size_t bad_line = lines(fs::path(src) / "impressions.jsonl");
    const auto r = run("analyze --data " + src + " -o " + dir("bad_out"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("impressions.jsonl:" + std::to_string(bad_line) + ":"), std::string::npos) << r.err;
}

TEST(Cli, NumericalFailureExitsTwoAndLeavesNothing) {
    const auto out = dir("blowup");
    const auto r = run("train-rlc --data " + corpus() + " --intents " + corpus() +
                       "/intents.jsonl --dim 8 --heads 2 --ff-dim 16 --steps 50 --lr 1e300 --warmup 0 --seed 1 -o " + out);
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, FailedRunRemovesPartialOutputs) {
    clarify::Report rep;
    rep.command = "analyze";
    rep.table("first", {"a"}).add({1});
    rep.table("second", {"a"}).add({Json::object({{"nested", 1}})});
    const auto src = kRoot / "partial_report.json";
    std::ofstream(src) << Json(rep).dump();
    const auto out = fs::path(dir("partial"));
    fs::create_directories(out);
    std::ofstream(out / "keep.txt") << "mine";
    const auto r = run("plot-data --report " + src.string() + " -o " + out.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(fs::exists(out / "first.tsv"));
    EXPECT_FALSE(fs::exists(out / "manifest.json"));
    EXPECT_EQ(slurp(out / "keep.txt"), "mine");
}

TEST(Cli, ConfigFileAndPrecedence) {
    const auto cfg = kRoot / "cfg.json";
    std::ofstream(cfg) << R"({"seed": 3, "impressions": 4, "synth-gen": {"queries": 5, "panes-per-query": 1}})";
    const auto a = fs::path(dir("cfg_a"));
    ASSERT_EQ(run("synth-gen --config " + cfg.string() + " -o " + a.string()).code, 0);
    EXPECT_EQ(lines(a / "queries.jsonl"), 5u);
    EXPECT_EQ(json_file(a / "manifest.json")["seed"], 3);
    EXPECT_EQ(json_file(a / "manifest.json")["config"]["impressions"], "4");

    const auto b = fs::path(dir("cfg_b"));
    ASSERT_EQ(run("synth-gen --config " + cfg.string() + " --queries 7 -o " + b.string()).code, 0);
    EXPECT_EQ(lines(b / "queries.jsonl"), 7u);

    // environment supplies the output directory
    const auto c = fs::path(dir("cfg_env"));
    ASSERT_EQ(run("synth-gen --seed 1 --queries 2 --impressions 2", "CLARIFY_OUT_DIR=" + c.string()).code, 0);
    EXPECT_TRUE(fs::exists(c / "queries.jsonl"));

    std::ofstream(cfg) << R"({"synth-gen": {"quieries": 5}})";
    EXPECT_EQ(run("synth-gen --seed 1 --config " + cfg.string() + " -o " + dir("cfg_bad")).code, 1);
    std::ofstream(cfg) << R"({"seed": )";
    EXPECT_EQ(run("synth-gen --config " + cfg.string() + " -o " + dir("cfg_bad")).code, 1);
}

TEST(Cli, GeneratorConfigIsOverriddenByFlags) {
    const auto gen = kRoot / "gen.json";
    std::ofstream(gen) << R"({"queries": 4, "panes_per_query": 1, "swap_fraction": 0})";
    const auto a = fs::path(dir("gen_a"));
    ASSERT_EQ(run("synth-gen --seed 1 --impressions 2 --generator " + gen.string() + " -o " + a.string()).code, 0);
    EXPECT_EQ(lines(a / "queries.jsonl"), 4u);
    EXPECT_EQ(lines(a / "panes.jsonl"), 4u);
    const auto b = fs::path(dir("gen_b"));
    ASSERT_EQ(run("synth-gen --seed 1 --impressions 2 --queries 6 --generator " + gen.string() + " -o " + b.string()).code, 0);
    EXPECT_EQ(lines(b / "queries.jsonl"), 6u);
}

TEST(Cli, BiasOnSwapCorpus) {
    const auto data = dir("swapdata");
    ASSERT_EQ(run("synth-gen --seed 3 --queries 80 --panes-per-query 1 --swap-fraction 1 --impressions 40 "
                  "--user-model size_offset_logistic --w-offset -1 --stats-only -o " +
                  data)
                  .code,
              0);
    const auto out = fs::path(dir("bias"));
    const auto r = run("bias --data " + data + " --folds 5 -o " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* t : {"scatter", "above_diagonal", "weights", "cross_entropy", "examination"})
        EXPECT_TRUE(fs::exists(out / (std::string(t) + ".tsv"))) << t;
    EXPECT_EQ(lines(out / "cross_entropy.tsv"), 7u);
    EXPECT_EQ(lines(out / "weights.tsv"), 11u);
}

TEST(Cli, ModelChainAndPlotData) {
    const auto& data = corpus();
    const auto intents = data + "/intents.jsonl";
    const auto rlc = fs::path(dir("rlc"));
    auto r = run("train-rlc --data " + data + " --intents " + intents + " " + kTinyRlc + " -o " + rlc.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(rlc / "loss.tsv"), 21u);
    EXPECT_EQ(json_file(rlc / "rlc.json")["config"]["dim"], 8);

    const auto ft = fs::path(dir("ft"));
    r = run("fine-tune-rlc --data " + data + " --intents " + intents + " --model " + (rlc / "rlc.json").string() +
            " --role ranker --steps 5 --seed 3 -o " + ft.string());
    ASSERT_EQ(r.code, 0) << r.err;

    const auto rk = fs::path(dir("ranker"));
    r = run("train-ranker --data " + data + " --intents " + intents + " --rlc " + (rlc / "rlc.json").string() +
            " --trees 10 --seed 3 -o " + rk.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(rk / "lambdamart.txt").rfind("lambdamart 1\nfeatures 19\n", 0), 0u);
    EXPECT_EQ(slurp(rk / "linear.txt").rfind("linear 1\nfeatures 19\n", 0), 0u);

    // a ranker trained with the RLC score refuses to run without it
    r = run("rank --data " + data + " --intents " + intents + " --ranker " + (rk / "lambdamart.txt").string() + " -o " +
            dir("rank_bad"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--rlc"), std::string::npos);

    const auto rank = fs::path(dir("rank"));
    const std::string rank_args = "rank --data " + data + " --intents " + intents + " --ranker " +
                                  (rk / "lambdamart.txt").string() + " --rlc " + (rlc / "rlc.json").string() +
                                  " --query q000001 --query q000002 -o ";
    r = run(rank_args + rank.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = json_file(rank / "report.json").get<clarify::Report>();
    ASSERT_EQ(rep.tables.size(), 1u);
    const auto& rows = rep.tables[0].rows;
    EXPECT_EQ(rows.size(), 6u);
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i][0] == rows[i - 1][0]) {
            EXPECT_EQ(rows[i][1].get<int>(), rows[i - 1][1].get<int>() + 1);
            EXPECT_LE(rows[i][3].get<double>(), rows[i - 1][3].get<double>());
        }
    EXPECT_EQ(run(rank_args.substr(0, rank_args.find("--query")) + "--query nope -o " + dir("rank_q")).code, 1);

    const auto ev = fs::path(dir("eval"));
    const std::string eval_args = "eval --data " + data + " --intents " + intents + " --ranker with=" +
                                  (rk / "lambdamart.txt").string() + " --ranker " + (rk / "linear.txt").string() +
                                  " --rlc " + (rlc / "rlc.json").string() + " --seed 3 --rounds 200 -o ";
    r = run(eval_args + ev.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto table = slurp(ev / "table7.tsv");
    EXPECT_EQ(lines(ev / "table7.tsv"), 4u);
    EXPECT_NE(table.find("\nclarification_estimation\t"), std::string::npos);
    EXPECT_NE(table.find("\nwith\t"), std::string::npos);
    EXPECT_NE(table.find("\nlinear\t"), std::string::npos);

    // the whole chain reruns byte for byte
    const auto rlc2 = fs::path(dir("rlc2"));
    ASSERT_EQ(run("train-rlc --data " + data + " --intents " + intents + " " + kTinyRlc + " -o " + rlc2.string()).code, 0);
    expect_same_tree(rlc, rlc2);
    const auto ev2 = fs::path(dir("eval2"));
    ASSERT_EQ(run(eval_args + ev2.string()).code, 0);
    expect_same_tree(ev, ev2);

    const auto pd = fs::path(dir("plot"));
    ASSERT_EQ(run("plot-data --report " + (ev / "report.json").string() + " -o " + pd.string()).code, 0);
    EXPECT_EQ(slurp(pd / "table7.tsv"), table);
    EXPECT_EQ(run("plot-data --report " + (ev / "report.json").string() + " --table nope -o " + dir("plot2")).code, 1);
}
