// clarify: batch command surface over the library.
//
//   clarify <command> [options]      see `clarify --help` and docs/FORMATS.md
//
// Exit status: 0 success, 1 input or validation error, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "clarify/analytics.hpp"
#include "clarify/bias.hpp"
#include "clarify/formats.hpp"
#include "clarify/pipeline.hpp"
#include "clarify/report.hpp"

namespace {

namespace fs = std::filesystem;
using namespace clarify;

constexpr const char* kVersion = "1.0.0";

// ─── JSON config files ──────────────────────────────────────────────────────

// {"seed": 3, "train-rlc": {"steps": 600}}: top-level scalars apply to the
// running command when it has that option; objects name a command section.
class JsonConfig : public CLI::Config {
public:
    JsonConfig(const CLI::App* root, std::string active) : root_(root), active_(std::move(active)) {}

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        Json j;
        try {
            j = Json::parse(in);
        } catch (const std::exception& e) {
            throw InputError(std::string("config file: ") + e.what());
        }
        if (!j.is_object()) throw InputError("config file must hold a JSON object");
        const CLI::App* sub = active_.empty() ? nullptr : root_->get_subcommand_no_throw(active_);
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                if (!root_->get_subcommand_no_throw(key)) throw InputError("config file: unknown command '" + key + "'");
                if (key != active_) continue;
                for (const auto& [k, v] : value.items()) items.push_back(item(key, k, v));
            } else if (sub && sub->get_option_no_throw("--" + key)) {
                items.push_back(item(active_, key, value));
            }
        }
        return items;
    }

private:
    static CLI::ConfigItem item(const std::string& section, const std::string& key, const Json& v) {
        CLI::ConfigItem it;
        it.parents = {section};
        it.name = key;
        auto scalar = [&](const Json& x) {
            if (x.is_string()) return x.get<std::string>();
            if (x.is_boolean()) return std::string(x.get<bool>() ? "true" : "false");
            if (x.is_number()) return x.dump();
            throw InputError("config file: '" + section + "." + key + "' must be a scalar or a list of scalars");
        };
        if (v.is_array())
            for (const auto& x : v) it.inputs.push_back(scalar(x));
        else
            it.inputs.push_back(scalar(v));
        return it;
    }

    const CLI::App* root_;
    std::string active_;
};

// ─── per-run bookkeeping ────────────────────────────────────────────────────

std::uint64_t hash_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a(ss.str());
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

class Run {
public:
    Run(CLI::App* sub, fs::path out) : sub_(sub), out_(std::move(out)) {}

    const fs::path& out_dir() const { return out_; }

    fs::path input(const fs::path& p) {
        if (!fs::is_regular_file(p)) throw InputError("missing input file " + p.string());
        if (std::find(inputs_.begin(), inputs_.end(), p) == inputs_.end()) inputs_.push_back(p);
        return p;
    }

    fs::path output(const std::string& name) {
        if (!started_) {
            created_ = !fs::exists(out_);
            fs::create_directories(out_);
            started_ = true;
        }
        if (std::find(outputs_.begin(), outputs_.end(), name) == outputs_.end()) outputs_.push_back(name);
        return out_ / name;
    }

    void write_report(const Report& r) {
        for (const auto& t : r.tables) {
            auto os = open_output(output(t.name + ".tsv"));
            write_table_tsv(os, t);
        }
        auto os = open_output(output("report.json"));
        os << Json(r).dump(1) << '\n';
    }

    // Written last; lists inputs with content hashes and the resolved options.
    void write_manifest(std::optional<std::uint64_t> seed) {
        Json config = Json::object();
        for (const CLI::Option* opt : sub_->get_options()) {
            const auto& names = opt->get_lnames();
            if (names.empty()) continue;
            const std::string& name = names.front();
            if (name == "help" || name == "out" || name == "threads" || name == "config") continue;
            if (opt->count() > 0) {
                const auto& res = opt->results();
                config[name] = res.size() == 1 ? Json(res.front()) : Json(res);
            } else if (!opt->get_default_str().empty()) {
                config[name] = opt->get_default_str();
            }
        }
        Json inputs = Json::array();
        for (const auto& p : inputs_) inputs.push_back({{"path", p.generic_string()}, {"fnv1a64", hex64(hash_file(p))}});
        std::vector<std::string> outputs = outputs_;
        auto os = open_output(output("manifest.json"));
        Json m{{"tool", "clarify"}, {"version", kVersion}, {"command", sub_->get_name()},
               {"seed", seed ? Json(*seed) : Json(nullptr)}, {"config", config}, {"inputs", inputs},
               {"outputs", outputs}};
        os << m.dump(1) << '\n';
    }

    // Removes everything this run wrote.
    void discard() noexcept {
        std::error_code ec;
        for (const auto& name : outputs_) fs::remove(out_ / name, ec);
        fs::remove(out_ / "manifest.json", ec);
        if (created_) fs::remove(out_, ec);  // only if now empty
    }

private:
    CLI::App* sub_;
    fs::path out_;
    std::vector<fs::path> inputs_;
    std::vector<std::string> outputs_;
    bool started_ = false;
    bool created_ = false;
};

// ─── loading the on-disk corpus ─────────────────────────────────────────────

fs::path in_data(Run& run, const fs::path& dir, const std::string& name) { return run.input(dir / name); }

bool has_data(const fs::path& dir, const std::string& name) { return fs::is_regular_file(dir / name); }

// stats.jsonl when present, else counts accumulated from impressions.jsonl.
StatsByPane load_stats(Run& run, const fs::path& dir, const std::vector<ClarificationPane>& panes) {
    if (has_data(dir, "stats.jsonl")) return read_stats(in_data(run, dir, "stats.jsonl"));
    const auto log = read_jsonl<ImpressionRecord>(in_data(run, dir, "impressions.jsonl"));
    return accumulate_stats(log, panes);
}

Dataset load_dataset(Run& run, const fs::path& dir, const fs::path& intents_path) {
    Dataset d;
    d.queries = read_jsonl<Query>(in_data(run, dir, "queries.jsonl"));
    d.panes = read_jsonl<ClarificationPane>(in_data(run, dir, "panes.jsonl"));
    d.stats = load_stats(run, dir, d.panes);
    if (has_data(dir, "lexicon.tsv")) d.lexicon = read_lexicon(in_data(run, dir, "lexicon.tsv"));
    if (has_data(dir, "click_titles.tsv"))
        d.history = historical_clicks_from_titles(read_click_titles(in_data(run, dir, "click_titles.tsv")), d.queries);
    if (has_data(dir, "labels.jsonl"))
        for (const auto& l : read_jsonl<PaneLabels>(in_data(run, dir, "labels.jsonl"))) d.grades[l.pane_id] = l.overall;
    d.intents = group_intents(read_jsonl<IntentSet>(run.input(intents_path)));
    std::set<std::string> qids;
    for (const auto& q : d.queries)
        if (!qids.insert(q.id).second) throw InputError("duplicate query id " + q.id);
    std::set<std::string> pids;
    for (const auto& p : d.panes) {
        if (!pids.insert(p.id).second) throw InputError("duplicate pane id " + p.id);
        if (!qids.count(p.query_id)) throw InputError("pane " + p.id + " references unknown query " + p.query_id);
    }
    return d;
}

std::unique_ptr<RlcModel> load_rlc(Run& run, const fs::path& p) {
    auto in = open_input(run.input(p));
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw InputError(p.string() + ": " + e.what());
    }
    try {
        return RlcModel::from_checkpoint(j);
    } catch (const Json::exception& e) {
        throw InputError(p.string() + ": " + e.what());
    }
}

void save_rlc(Run& run, const RlcModel& model) {
    auto os = open_output(run.output("rlc.json"));
    os << model.to_checkpoint().dump() << '\n';
}

// A trained ranker file: LambdaMART ensemble or linear model.
struct LoadedRanker {
    std::string name;
    std::size_t features = 0;
    PaneScorer scorer;
};

LoadedRanker load_ranker(Run& run, const std::string& spec) {
    std::string name, path = spec;
    if (auto eq = spec.find('='); eq != std::string::npos) name = spec.substr(0, eq), path = spec.substr(eq + 1);
    if (name.empty()) name = fs::path(path).stem().string();
    auto in = open_input(run.input(path));
    std::string first;
    std::getline(in, first);
    in.seekg(0);
    LoadedRanker r;
    r.name = name;
    const std::size_t with = feature_names(true).size(), without = feature_names(false).size();
    try {
        if (first.rfind("lambdamart", 0) == 0) {
            auto e = read_ensemble(in);
            r.features = e.feature_count;
            if (r.features != with && r.features != without) throw InputError("unexpected feature count");
            r.scorer = ensemble_scorer(e, r.features == with);
        } else if (first.rfind("linear", 0) == 0) {
            auto l = read_linear(in);
            r.features = l.weights.size();
            if (r.features != with && r.features != without) throw InputError("unexpected feature count");
            r.scorer = linear_scorer(l, r.features == with);
        } else {
            throw InputError("unrecognized ranker format");
        }
    } catch (const InputError& e) {
        throw InputError(path + ": " + e.what());
    }
    return r;
}

bool needs_rlc(const LoadedRanker& r) { return r.features == feature_names(true).size(); }

// ─── shared option groups ───────────────────────────────────────────────────

struct Common {
    std::string out = ".";
    int threads = default_threads();
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("-o,--out", c.out, "Output directory")->envname("CLARIFY_OUT_DIR");
    sub->add_option("--threads", c.threads, "Worker cap; results do not depend on it")
        ->envname("CLARIFY_THREADS")
        ->check(CLI::Range(1, 1024));
}

struct SplitOpts {
    std::uint64_t seed = 1;
    double rlc = 0.5;
    double ranker = 0.25;

    SplitConfig config() const { return {rlc, ranker}; }
};

void add_split(CLI::App* sub, SplitOpts& s) {
    sub->add_option("--seed", s.seed, "Seed for the query split and any sampling")->required();
    sub->add_option("--split-rlc", s.rlc, "Fraction of queries for RLC training");
    sub->add_option("--split-ranker", s.ranker, "Fraction of queries for ranker training; the rest is test");
}

Table loss_table(const TrainReport& rep) {
    Table t{"loss", {"step", "loss", "lr"}, {}};
    for (const auto& p : rep.curve) t.add({p.step, cell(p.loss), cell(p.lr)});
    return t;
}

// ─── commands ───────────────────────────────────────────────────────────────

struct SynthOpts {
    std::uint64_t seed = 1;
    std::string generator;
    int queries = 100, panes_per_query = 2, impressions = 100;
    double swap_fraction = 0.5;
    std::string relevance_mode = "beta";
    std::string user_model = "relevance_only";
    std::vector<double> exam_probs;
    double cascade_continue = 0, bias = 0, w_rel = 1, w_offset = 0, w_size = 0;
    bool stats_only = false;
};

void cmd_synth_gen(CLI::App* sub, Run& run, const SynthOpts& o, const Common& common) {
    SynthConfig sc;
    if (!o.generator.empty()) {
        auto in = open_input(run.input(o.generator));
        try {
            sc = Json::parse(in).get<SynthConfig>();
        } catch (const Json::exception& e) {
            throw InputError(o.generator + ": " + e.what());
        }
    }
    auto given = [&](const char* name) { return sub->get_option(name)->count() > 0; };
    if (given("--queries") || o.generator.empty()) sc.queries = o.queries;
    if (given("--panes-per-query") || o.generator.empty()) sc.panes_per_query = o.panes_per_query;
    if (given("--swap-fraction") || o.generator.empty()) sc.swap_fraction = o.swap_fraction;
    if (given("--relevance-mode") || o.generator.empty()) sc.relevance_mode = parse_relevance_mode(o.relevance_mode);
    validate_config(sc);

    UserModel um;
    um.kind = parse_user_model_kind(o.user_model);
    um.exam_probs = o.exam_probs;
    um.cascade_continue = o.cascade_continue;
    um.bias = o.bias;
    um.w_rel = o.w_rel;
    um.w_offset = o.w_offset;
    um.w_size = o.w_size;
    validate_user_model(um);

    const auto corpus = gen_corpus(sc, o.seed);
    StatsByPane stats;
    std::size_t impressions = 0;
    if (o.stats_only) {
        stats = simulate_stats(corpus, um, o.impressions, o.seed, common.threads);
    } else {
        const auto log = simulate_impressions(corpus, um, o.impressions, o.seed, sc, common.threads);
        write_jsonl(run.output("impressions.jsonl"), log);
        stats = accumulate_stats(log, corpus.panes);
        impressions = log.size();
    }
    if (o.stats_only)
        for (const auto& [id, s] : stats) impressions += static_cast<std::size_t>(s.impressions);

    write_jsonl(run.output("queries.jsonl"), corpus.queries);
    write_jsonl(run.output("panes.jsonl"), corpus.panes);
    write_jsonl(run.output("labels.jsonl"), corpus.labels);
    write_stats(run.output("stats.jsonl"), stats);
    std::vector<PaneTruth> truth;
    for (const auto& p : corpus.panes) truth.push_back({p.id, corpus.engagement.at(p.id), corpus.relevance.at(p.id)});
    write_jsonl(run.output("truth.jsonl"), truth);
    write_reformulations(run.output("reformulations.tsv"), corpus.reformulations);
    write_click_titles(run.output("click_titles.tsv"), corpus.click_titles);
    write_lexicon(run.output("lexicon.tsv"), corpus.entity_lexicon);
    write_swaps(run.output("swaps.tsv"), corpus.swap_pairs);

    Report r;
    r.command = "synth-gen";
    r.values = {{"generator", Json(sc)}, {"user_model", Json(um)}};
    auto& t = r.table("corpus_summary", {"item", "count"});
    t.add({"queries", corpus.queries.size()});
    t.add({"panes", corpus.panes.size()});
    t.add({"swap_pairs", corpus.swap_pairs.size()});
    t.add({"impressions", impressions});
    t.add({"reformulation_records", corpus.reformulations.size()});
    t.add({"click_title_records", corpus.click_titles.size()});
    run.write_report(r);
    run.write_manifest(o.seed);
}

struct AnalyzeOpts {
    std::string data;
    std::int64_t min_impressions = 10;
    double dwell_threshold = 30.0;
    double reformulation_window = 300.0;
};

void cmd_analyze(Run& run, const AnalyzeOpts& o) {
    const fs::path dir = o.data;
    const auto queries = read_jsonl<Query>(in_data(run, dir, "queries.jsonl"));
    const auto panes = read_jsonl<ClarificationPane>(in_data(run, dir, "panes.jsonl"));
    const auto log = read_jsonl<ImpressionRecord>(in_data(run, dir, "impressions.jsonl"));
    std::optional<HistoricalClicks> history;
    if (has_data(dir, "click_titles.tsv"))
        history = historical_clicks_from_titles(read_click_titles(in_data(run, dir, "click_titles.tsv")), queries);
    AnalyticsOptions opts;
    opts.min_impressions = o.min_impressions;

    Report r;
    r.command = "analyze";
    for (auto dim : kAllDimensions) {
        const bool url_dim = dim == Dimension::unique_url_bin || dim == Dimension::url_entropy_bin;
        if (url_dim && !history) continue;
        const auto bt = engagement_breakdown(log, panes, queries, dim, history ? &*history : nullptr, opts);
        const bool box = is_box_dimension(dim), grouped = dim == Dimension::query_type;
        std::vector<std::string> cols;
        if (grouped) cols.push_back("group");
        cols.insert(cols.end(), {"bucket", "impressions", "relative_engagement"});
        if (box) cols.insert(cols.end(), {"min", "q1", "median", "q3", "max"});
        auto& t = r.table("breakdown_" + std::string(to_string(dim)), cols);
        for (const auto& row : bt.rows) {
            std::vector<Json> cells;
            if (grouped) cells.push_back(row.group);
            cells.insert(cells.end(), {row.bucket, row.impressions, cell(row.relative_engagement)});
            if (box) {
                const auto b = row.box.value_or(BoxStats{});
                cells.insert(cells.end(), {cell(b.min), cell(b.q1), cell(b.median), cell(b.q3), cell(b.max)});
            }
            t.add(cells);
        }
        r.values["overall_engagement"] = cell(bt.overall_rate);
    }

    auto& cc = r.table("conditional_clicks", {"class", "answer_count", "position", "probability"});
    std::set<int> counts;
    for (const auto& p : panes) counts.insert(p.answer_count());
    for (auto cls : {AmbiguityClass::ambiguous, AmbiguityClass::faceted}) {
        for (int k : counts) {
            std::vector<double> dist;
            try {
                dist = conditional_click_by_position(log, panes, queries, cls, k, o.min_impressions);
            } catch (const InputError&) {
                continue;  // no panes of this class and size
            }
            for (std::size_t i = 0; i < dist.size(); ++i) cc.add({to_string(cls), k, i + 1, cell(dist[i])});
        }
    }

    auto& s = r.table("summary", {"metric", "value"});
    s.add({"impressions", log.size()});
    s.add({"panes", panes.size()});
    s.add({"dissatisfaction_rate", cell(dissatisfaction_rate(log, o.dwell_threshold, o.reformulation_window))});
    bool engaged = std::any_of(log.begin(), log.end(), [](const ImpressionRecord& x) { return !x.answer_clicks.empty(); });
    s.add({"multi_click_rate", engaged ? cell(multi_click_rate(log)) : Json(nullptr)});
    if (has_data(dir, "labels.jsonl")) {
        const auto labels = read_jsonl<PaneLabels>(in_data(run, dir, "labels.jsonl"));
        const auto ld = label_distribution(labels);
        for (auto g : {Grade::Good, Grade::Fair, Grade::Bad}) {
            s.add({"overall_label_" + std::string(to_string(g)), cell(ld.overall[static_cast<std::size_t>(g)])});
            s.add({"landing_label_" + std::string(to_string(g)), cell(ld.landing[static_cast<std::size_t>(g)])});
        }
    }
    run.write_report(r);
    run.write_manifest(std::nullopt);
}

struct BiasOpts {
    std::string data;
    int folds = 10;
    std::int64_t min_impressions = 1;
    bool logit_ctr = false;
};

void cmd_bias(Run& run, const BiasOpts& o) {
    const fs::path dir = o.data;
    const auto panes = read_jsonl<ClarificationPane>(in_data(run, dir, "panes.jsonl"));
    const auto stats = load_stats(run, dir, panes);
    const auto triples = build_swap_dataset(panes, &stats, o.min_impressions);
    if (triples.empty()) throw InputError("no adjacent-swap pane pairs in " + dir.string());
    LogregOptions lo;
    lo.logit_ctr = o.logit_ctr;

    Report r;
    r.command = "bias";
    r.values["triples"] = triples.size();

    const auto points = all_swap_points(triples, stats);
    const auto lo_points = log_odds_points(points);
    auto& sc = r.table("scatter", {"answer_count", "swap_index", "x", "y", "x_log_odds", "y_log_odds"});
    for (std::size_t k = 0; k < points.size(); ++k)
        sc.add({points[k].answer_count, points[k].swap_index, cell(points[k].x()), cell(points[k].y()),
                cell(lo_points[k].first), cell(lo_points[k].second)});
    if (lo_points.size() >= 2) {
        try {
            const auto fit = fit_scatter_line(lo_points);
            r.values["log_odds_slope"] = cell(fit.slope);
            r.values["log_odds_intercept"] = cell(fit.intercept);
        } catch (const std::domain_error&) {
            r.values["log_odds_slope"] = nullptr;  // all x equal
        }
    }
    auto& ad = r.table("above_diagonal", {"answer_count", "swap_index", "above", "below", "ties", "pct_above"});
    for (const auto& [key, c] : pct_above_diagonal(triples, stats))
        ad.add({key.first, key.second, c.above, c.below, c.ties, cell(c.pct())});

    const auto records = make_swap_records(triples, panes, stats);
    const auto cv = fit_click_logreg(records, o.folds, lo);
    if (!cv.all_converged) throw NumericalError("logistic click model did not converge");
    auto& w = r.table("weights", {"fold", "label", "CTR_L", "CTR_R", "SIZE_DIFF", "OFFSET", "intercept"});
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        for (auto [label, fit] : {std::pair{"L", &cv.folds[f].label_l}, std::pair{"R", &cv.folds[f].label_r}}) {
            std::vector<Json> row{f + 1, label};
            for (double x : fit->weights) row.push_back(cell(x));
            row.push_back(cell(fit->intercept));
            w.add(row);
        }
    }

    const auto ce = evaluate_click_models(records, o.folds, kAllClickModels, lo);
    auto& ct = r.table("cross_entropy", {"model", "mean", "stddev"});
    auto& cf = r.table("cross_entropy_folds", {"model", "fold", "cross_entropy"});
    for (const auto& row : ce) {
        if (!std::isfinite(row.mean)) throw NumericalError("non-finite cross entropy for " + std::string(to_string(row.kind)));
        ct.add({to_string(row.kind), cell(row.mean), cell(row.stddev)});
        for (std::size_t f = 0; f < row.per_fold.size(); ++f) cf.add({to_string(row.kind), f + 1, cell(row.per_fold[f])});
        for (const auto& msg : row.warnings) std::cerr << "warning: " << to_string(row.kind) << ": " << msg << '\n';
    }

    // Click models fitted on all triples, for reuse.
    const auto exam = fit_click_model(ClickModelKind::examination, records, lo);
    auto& et = r.table("examination", {"answer_count", "position", "probability"});
    for (const auto& [k, probs] : exam.examination.exam)
        for (std::size_t i = 0; i < probs.size(); ++i) et.add({k, i + 1, cell(probs[i])});
    r.values["cascade_continue"] = cell(fit_click_model(ClickModelKind::cascade, records, lo).cascade_continue);
    run.write_report(r);
    run.write_manifest(std::nullopt);
}

struct IntentOpts {
    std::string data, reformulations, click_titles, queries;
    int min_freq = kDefaultMinFreq;
    int n_max = kDefaultMaxIntents;
};

void cmd_intents(Run& run, const IntentOpts& o) {
    auto pick = [&](const std::string& explicit_path, const char* name) -> fs::path {
        if (!explicit_path.empty()) return run.input(explicit_path);
        if (o.data.empty()) throw InputError(std::string("need --data or an explicit path for ") + name);
        return run.input(fs::path(o.data) / name);
    };
    const auto queries = read_jsonl<Query>(pick(o.queries, "queries.jsonl"));
    const auto refs = read_reformulations(pick(o.reformulations, "reformulations.tsv"));
    const auto titles = read_click_titles(pick(o.click_titles, "click_titles.tsv"));
    const auto sets = mine_intents(refs, titles, queries, o.min_freq, o.n_max);
    write_jsonl(run.output("intents.jsonl"), sets);

    Report r;
    r.command = "intents";
    auto& t = r.table("intent_counts", {"source", "queries", "mean_items"});
    for (auto src : {IntentSource::reformulation, IntentSource::click_title}) {
        std::size_t n = 0, items = 0;
        for (const auto& s : sets)
            if (s.source == src) ++n, items += s.items.size();
        t.add({to_string(src), n, cell(n ? static_cast<double>(items) / static_cast<double>(n) : 0.0)});
    }
    run.write_report(r);
    run.write_manifest(std::nullopt);
}

struct RlcOpts {
    std::string data, intents, model;
    SplitOpts split;
    long steps = 1000;
    double lr = AdamConfig{}.lr;
    long warmup = AdamConfig{}.warmup;
    double weight_decay = AdamConfig{}.weight_decay;
    std::size_t batch_pairs = 8;
    std::size_t dim = 64, heads = 2, layers = 1, ff_dim = 128;
    std::string role = "rlc";
    double lr_scale = 0.1;
    std::size_t list_size = 10;
};

TrainConfig train_config(const RlcOpts& o) {
    TrainConfig tc;
    tc.steps = o.steps;
    tc.adam.lr = o.lr;
    tc.adam.warmup = o.warmup;
    tc.adam.weight_decay = o.weight_decay;
    tc.batch_pairs = o.batch_pairs;
    tc.seed = o.split.seed;
    return tc;
}

void cmd_train_rlc(Run& run, const RlcOpts& o) {
    const auto d = load_dataset(run, o.data, o.intents);
    const auto roles = split_queries(d.queries, o.split.seed, o.split.config());
    const auto triples = engagement_triples(d, roles, parse_query_role(o.role));
    RlcConfig rc;
    rc.dim = o.dim;
    rc.heads = o.heads;
    rc.layers = o.layers;
    rc.ff_dim = o.ff_dim;
    rc.seed = o.split.seed;
    validate_rlc_config(rc);
    RlcModel model(rc);
    const auto pairs = build_pairs(triples, d.lexicon, rc);
    const auto rep = train_pairs(model, pairs, train_config(o));
    save_rlc(run, model);

    Report r;
    r.command = "train-rlc";
    r.values = {{"queries", triples.size()}, {"pairs", rep.pairs}, {"uniform_substitutions", rep.uniform_substitutions},
                {"train_pairwise_accuracy", cell(pairwise_accuracy(model, pairs))}};
    r.tables.push_back(loss_table(rep));
    run.write_report(r);
    run.write_manifest(o.split.seed);
}

void cmd_fine_tune_rlc(Run& run, const RlcOpts& o) {
    const auto d = load_dataset(run, o.data, o.intents);
    auto model = load_rlc(run, o.model);
    const auto roles = split_queries(d.queries, o.split.seed, o.split.config());
    const auto labeled = labeled_queries(d, roles, parse_query_role(o.role));
    FineTuneConfig fc;
    fc.train = train_config(o);
    fc.lr_scale = o.lr_scale;
    fc.list_size = o.list_size;
    const auto rep = fine_tune(labeled, *model, d.lexicon, fc);
    save_rlc(run, *model);

    Report r;
    r.command = "fine-tune-rlc";
    r.values = {{"queries", labeled.size()}, {"pairs", rep.pairs}, {"uniform_substitutions", rep.uniform_substitutions}};
    r.tables.push_back(loss_table(rep));
    run.write_report(r);
    run.write_manifest(o.split.seed);
}

struct RankerOpts {
    std::string data, intents, rlc;
    SplitOpts split;
    std::string role = "ranker";
    int trees = 100, max_depth = 4, min_leaf = 1;
    double shrinkage = 0.1, ridge = 1e-3;
};

void cmd_train_ranker(Run& run, const RankerOpts& o, const Common& common) {
    const auto d = load_dataset(run, o.data, o.intents);
    std::unique_ptr<RlcModel> model;
    if (!o.rlc.empty()) model = load_rlc(run, o.rlc);
    const auto roles = split_queries(d.queries, o.split.seed, o.split.config());
    const auto queries = ranking_queries(d, roles, parse_query_role(o.role), model.get(), common.threads);
    const auto rd = to_ranking_data(queries, model != nullptr);
    LambdaMartConfig lc;
    lc.trees = o.trees;
    lc.max_depth = o.max_depth;
    lc.min_leaf = o.min_leaf;
    lc.shrinkage = o.shrinkage;
    lc.threads = common.threads;
    LambdaMartReport lrep;
    const auto ensemble = train_lambdamart(rd, lc, &lrep);
    const auto linear = train_linear(rd, o.ridge);
    {
        auto os = open_output(run.output("lambdamart.txt"));
        write_ensemble(os, ensemble);
    }
    {
        auto os = open_output(run.output("linear.txt"));
        write_linear(os, linear);
    }

    Report r;
    r.command = "train-ranker";
    const bool with = model != nullptr;
    const auto train_eval = evaluate_ranker("lambdamart", queries, ensemble_scorer(ensemble, with), common.threads);
    r.values = {{"queries", rd.queries()}, {"panes", rd.x.size()}, {"with_rlc", with}, {"rejected_trees", lrep.rejected},
                {"train_ndcg@1", cell(train_eval.ndcg[0])}};
    auto& t = r.table("boosting", {"tree", "loss_before", "loss_after"});
    for (std::size_t i = 0; i < lrep.rounds.size(); ++i)
        t.add({i + 1, cell(lrep.rounds[i].first), cell(lrep.rounds[i].second)});
    auto& f = r.table("features", {"index", "name", "linear_weight"});
    const auto names = feature_names(with);
    for (std::size_t i = 0; i < names.size(); ++i) f.add({i, names[i], cell(linear.weights[i])});
    run.write_report(r);
    run.write_manifest(o.split.seed);
}

struct RankOpts {
    std::string data, intents, rlc, ranker;
    SplitOpts split;
    std::string role = "all";
    std::vector<std::string> query_ids;
};

void cmd_rank(Run& run, const RankOpts& o) {
    const auto d = load_dataset(run, o.data, o.intents);
    const auto ranker = load_ranker(run, o.ranker);
    std::unique_ptr<RlcModel> model;
    if (!o.rlc.empty()) model = load_rlc(run, o.rlc);
    if (needs_rlc(ranker) && !model) throw InputError("ranker " + o.ranker + " uses the RLC score; pass --rlc");

    std::map<std::string, QueryRole> roles;
    const bool all = o.role == "all";
    if (!all) roles = split_queries(d.queries, o.split.seed, o.split.config());
    const auto role = all ? QueryRole::test : parse_query_role(o.role);
    std::set<std::string> wanted(o.query_ids.begin(), o.query_ids.end());
    for (const auto& id : wanted)
        if (std::none_of(d.queries.begin(), d.queries.end(), [&](const Query& q) { return q.id == id; }))
            throw InputError("unknown query id " + id);

    Report r;
    r.command = "rank";
    auto& t = r.table("ranking", {"query_id", "rank", "pane_id", "score"});
    for (const auto& q : d.queries) {
        if (!wanted.empty() && !wanted.count(q.id)) continue;
        if (!all && roles.at(q.id) != role) continue;
        std::vector<ClarificationPane> panes;
        for (const auto& p : d.panes)
            if (p.query_id == q.id) panes.push_back(p);
        if (panes.empty()) continue;
        auto intents_it = d.intents.find(q.id);
        QueryIntents intents;
        if (intents_it != d.intents.end()) intents = intents_it->second;
        auto hist = d.history.find(q.id);
        std::vector<FeatureVector> feats;
        for (const auto& p : panes) {
            std::optional<double> s;
            if (model) s = score(q.text, p, intents, d.lexicon, *model);
            feats.push_back(extract_features(q, p, hist == d.history.end() ? UrlClicks{} : hist->second, s));
        }
        const auto ranked = rank_panes(panes, feats, ranker.scorer);
        for (std::size_t i = 0; i < ranked.size(); ++i) t.add({q.id, i + 1, ranked[i].pane_id, cell(ranked[i].score)});
    }
    run.write_report(r);
    run.write_manifest(all ? std::nullopt : std::optional(o.split.seed));
}

struct EvalOpts {
    std::string data, intents, rlc;
    std::vector<std::string> rankers;
    SplitOpts split;
    std::string role = "test";
    int rounds = 10000;
};

void cmd_eval(Run& run, const EvalOpts& o, const Common& common) {
    const auto d = load_dataset(run, o.data, o.intents);
    std::vector<LoadedRanker> rankers;
    for (const auto& spec : o.rankers) rankers.push_back(load_ranker(run, spec));
    std::unique_ptr<RlcModel> model;
    if (!o.rlc.empty()) model = load_rlc(run, o.rlc);
    for (const auto& rk : rankers)
        if (needs_rlc(rk) && !model) throw InputError("ranker " + rk.name + " uses the RLC score; pass --rlc");
    const auto roles = split_queries(d.queries, o.split.seed, o.split.config());
    const auto queries = ranking_queries(d, roles, parse_query_role(o.role), model.get(), common.threads);

    std::vector<EvalResult> rows;
    rows.push_back(evaluate_ranker(kBaselineMethod, queries, entropy_baseline(), common.threads));
    for (const auto& rk : rankers) rows.push_back(evaluate_ranker(rk.name, queries, rk.scorer, common.threads));
    const auto& base = rows.front();

    Report r;
    r.command = "eval";
    r.values = {{"queries", queries.size()}, {"baseline", kBaselineMethod}};
    auto& t = r.table("table7", {"method", "ndcg@1", "ndcg@3", "ndcg@5", "top_engagement",
                                 "engagement_improvement_pct", "p_ndcg@1_vs_baseline"});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto& row = rows[i];
        Json imp = nullptr, p = nullptr;
        if (base.top_engagement > 0) imp = cell(engagement_improvement(row, base));
        if (i > 0) p = cell(paired_randomization_p(row.per_query_ndcg1, base.per_query_ndcg1, o.rounds, o.split.seed));
        t.add({row.method, cell(row.ndcg[0]), cell(row.ndcg[1]), cell(row.ndcg[2]), cell(row.top_engagement), imp, p});
    }
    run.write_report(r);
    run.write_manifest(o.split.seed);
}

struct PlotOpts {
    std::string report;
    std::vector<std::string> tables;
};

void cmd_plot_data(Run& run, const PlotOpts& o) {
    auto in = open_input(run.input(o.report));
    Report rep;
    try {
        rep = Json::parse(in).get<Report>();
    } catch (const Json::exception& e) {
        throw InputError(o.report + ": " + e.what());
    }
    std::set<std::string> wanted(o.tables.begin(), o.tables.end());
    for (const auto& name : wanted)
        if (std::none_of(rep.tables.begin(), rep.tables.end(), [&](const Table& t) { return t.name == name; }))
            throw InputError("report has no table '" + name + "'");
    for (const auto& t : rep.tables) {
        if (!wanted.empty() && !wanted.count(t.name)) continue;
        auto os = open_output(run.output(t.name + ".tsv"));
        write_table_tsv(os, t);
    }
    run.write_manifest(std::nullopt);
}

// Subcommand named in argv, for routing config-file sections.
std::string active_command(int argc, char** argv, const CLI::App& app) {
    for (int i = 1; i < argc; ++i)
        if (app.get_subcommand_no_throw(argv[i])) return argv[i];
    return {};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Search clarification analytics, click-bias estimation and pane ranking"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.fallthrough();  // --config may follow the command name

    Common common;
    SynthOpts synth;
    AnalyzeOpts analyze;
    BiasOpts bias;
    IntentOpts intents;
    RlcOpts rlc, fine;
    RankerOpts ranker;
    RankOpts rank;
    EvalOpts eval;
    PlotOpts plot;

    auto* s = app.add_subcommand("synth-gen", "Generate a synthetic corpus and impression logs");
    add_common(s, common);
    s->add_option("--seed", synth.seed, "Master seed")->required();
    s->add_option("--generator", synth.generator, "JSON generator config; flags below override it");
    s->add_option("--queries", synth.queries, "Number of queries")->check(CLI::PositiveNumber);
    s->add_option("--panes-per-query", synth.panes_per_query, "Distinct panes per query")->check(CLI::PositiveNumber);
    s->add_option("--swap-fraction", synth.swap_fraction, "Share of queries that get adjacent-swap variants");
    s->add_option("--relevance-mode", synth.relevance_mode, "beta or intent");
    s->add_option("--impressions", synth.impressions, "Impressions per pane")->check(CLI::PositiveNumber);
    s->add_option("--user-model", synth.user_model, "relevance_only, examination, cascade or size_offset_logistic");
    s->add_option("--exam-probs", synth.exam_probs, "Examination probability per position");
    s->add_option("--cascade-continue", synth.cascade_continue, "Probability of scanning on after a click (cascade)");
    s->add_option("--bias", synth.bias, "Logistic user model intercept");
    s->add_option("--w-rel", synth.w_rel, "Logistic user model relevance weight");
    s->add_option("--w-offset", synth.w_offset, "Logistic user model offset weight");
    s->add_option("--w-size", synth.w_size, "Logistic user model size weight");
    s->add_flag("--stats-only", synth.stats_only, "Write per-pane counts without the impression log");

    auto* a = app.add_subcommand("analyze", "Engagement breakdowns, click curves and session measures");
    add_common(a, common);
    a->add_option("--data", analyze.data, "Corpus directory")->required();
    a->add_option("--min-impressions", analyze.min_impressions, "Panes with fewer impressions are skipped");
    a->add_option("--dwell-threshold", analyze.dwell_threshold, "Seconds below which a result click is unsatisfying");
    a->add_option("--reformulation-window", analyze.reformulation_window, "Seconds for a quick reformulation");

    auto* b = app.add_subcommand("bias", "Swap experiment analysis and click-model comparison");
    add_common(b, common);
    b->add_option("--data", bias.data, "Corpus directory")->required();
    b->add_option("--folds", bias.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
    b->add_option("--min-impressions", bias.min_impressions, "Panes with fewer impressions are skipped");
    b->add_flag("--logit-ctr", bias.logit_ctr, "Use log-odds CTR features in the logistic model");

    auto* in = app.add_subcommand("intents", "Mine intent sets from reformulations and clicked titles");
    add_common(in, common);
    in->add_option("--data", intents.data, "Corpus directory");
    in->add_option("--queries", intents.queries, "queries.jsonl (default: from --data)");
    in->add_option("--reformulations", intents.reformulations, "reformulations.tsv (default: from --data)");
    in->add_option("--click-titles", intents.click_titles, "click_titles.tsv (default: from --data)");
    in->add_option("--min-freq", intents.min_freq, "Minimum aggregated frequency")->check(CLI::NonNegativeNumber);
    in->add_option("--n-max", intents.n_max, "Intents kept per query and source")->check(CLI::PositiveNumber);

    auto add_rlc_opts = [&](CLI::App* sub, RlcOpts& o) {
        add_common(sub, common);
        add_split(sub, o.split);
        sub->add_option("--data", o.data, "Corpus directory")->required();
        sub->add_option("--intents", o.intents, "intents.jsonl")->required();
        sub->add_option("--role", o.role, "Query role to train on: rlc, ranker or test");
        sub->add_option("--steps", o.steps, "Optimizer steps")->check(CLI::PositiveNumber);
        sub->add_option("--lr", o.lr, "Peak learning rate");
        sub->add_option("--warmup", o.warmup, "Linear warmup steps");
        sub->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay");
        sub->add_option("--batch-pairs", o.batch_pairs, "Pairs per step")->check(CLI::PositiveNumber);
    };
    auto* tr = app.add_subcommand("train-rlc", "Train the pane scorer on engagement pairs");
    add_rlc_opts(tr, rlc);
    tr->add_option("--dim", rlc.dim, "Model width");
    tr->add_option("--heads", rlc.heads, "Attention heads");
    tr->add_option("--layers", rlc.layers, "Encoder layers per stage");
    tr->add_option("--ff-dim", rlc.ff_dim, "Feed-forward width");

    auto* ft = app.add_subcommand("fine-tune-rlc", "Fine-tune a trained scorer on graded labels");
    fine.steps = 200;
    add_rlc_opts(ft, fine);
    ft->add_option("--model", fine.model, "Checkpoint from train-rlc")->required();
    ft->add_option("--lr-scale", fine.lr_scale, "Multiplier on --lr");
    ft->add_option("--list-size", fine.list_size, "Panes per query after padding");

    auto* trk = app.add_subcommand("train-ranker", "Train LambdaMART and the linear baseline");
    add_common(trk, common);
    add_split(trk, ranker.split);
    trk->add_option("--data", ranker.data, "Corpus directory")->required();
    trk->add_option("--intents", ranker.intents, "intents.jsonl")->required();
    trk->add_option("--rlc", ranker.rlc, "RLC checkpoint; adds the RLC score feature");
    trk->add_option("--role", ranker.role, "Query role to train on");
    trk->add_option("--trees", ranker.trees, "Boosting rounds")->check(CLI::NonNegativeNumber);
    trk->add_option("--max-depth", ranker.max_depth, "Tree depth limit")->check(CLI::Range(1, 4));
    trk->add_option("--min-leaf", ranker.min_leaf, "Minimum rows per leaf")->check(CLI::PositiveNumber);
    trk->add_option("--shrinkage", ranker.shrinkage, "Learning rate per tree");
    trk->add_option("--ridge", ranker.ridge, "Ridge penalty of the linear baseline");

    auto* rk = app.add_subcommand("rank", "Order each query's panes with a trained ranker");
    add_common(rk, common);
    rank.split.seed = 1;
    rk->add_option("--data", rank.data, "Corpus directory")->required();
    rk->add_option("--intents", rank.intents, "intents.jsonl")->required();
    rk->add_option("--ranker", rank.ranker, "lambdamart.txt or linear.txt")->required();
    rk->add_option("--rlc", rank.rlc, "RLC checkpoint, needed by rankers trained with it");
    rk->add_option("--query", rank.query_ids, "Restrict to these query ids");
    rk->add_option("--role", rank.role, "all, rlc, ranker or test");
    rk->add_option("--seed", rank.split.seed, "Split seed when --role is not all");
    rk->add_option("--split-rlc", rank.split.rlc, "Split fraction for rlc");
    rk->add_option("--split-ranker", rank.split.ranker, "Split fraction for ranker");

    auto* ev = app.add_subcommand("eval", "nDCG and engagement improvement against the baseline");
    add_common(ev, common);
    add_split(ev, eval.split);
    ev->add_option("--data", eval.data, "Corpus directory")->required();
    ev->add_option("--intents", eval.intents, "intents.jsonl")->required();
    ev->add_option("--ranker", eval.rankers, "Ranker file, optionally name=path; repeatable")->required();
    ev->add_option("--rlc", eval.rlc, "RLC checkpoint");
    ev->add_option("--role", eval.role, "Query role to evaluate on");
    ev->add_option("--rounds", eval.rounds, "Randomization test rounds")->check(CLI::PositiveNumber);

    auto* pd = app.add_subcommand("plot-data", "Re-emit the tables of a report.json as TSV files");
    add_common(pd, common);
    pd->add_option("--report", plot.report, "report.json of any command")->required();
    pd->add_option("--table", plot.tables, "Only these tables");

    app.set_config("--config", "", "JSON config; command-line flags take precedence");
    app.config_formatter(std::make_shared<JsonConfig>(&app, active_command(argc, argv, app)));
    app.allow_config_extras(CLI::config_extras_mode::error);

    if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
        std::cerr << "error: unknown command '" << argv[1] << "'\n";
        return 1;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    Run run(sub, common.out);
    try {
        const std::string name = sub->get_name();
        if (name == "synth-gen") cmd_synth_gen(sub, run, synth, common);
        else if (name == "analyze") cmd_analyze(run, analyze);
        else if (name == "bias") cmd_bias(run, bias);
        else if (name == "intents") cmd_intents(run, intents);
        else if (name == "train-rlc") cmd_train_rlc(run, rlc);
        else if (name == "fine-tune-rlc") cmd_fine_tune_rlc(run, fine);
        else if (name == "train-ranker") cmd_train_ranker(run, ranker, common);
        else if (name == "rank") cmd_rank(run, rank);
        else if (name == "eval") cmd_eval(run, eval, common);
        else if (name == "plot-data") cmd_plot_data(run, plot);
        return 0;
    } catch (const NumericalError& e) {
        run.discard();
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        run.discard();
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
