#pragma once
// End-to-end glue: intent mining, the seeded query split, and the
// RLC -> LambdaMART -> evaluation chain shared by the CLI and the tests.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "analytics.hpp"
#include "core.hpp"
#include "intents.hpp"
#include "parallel.hpp"
#include "ranker.hpp"
#include "rlc.hpp"
#include "rng.hpp"
#include "synthlog.hpp"

namespace clarify {

// Both sources, keyed by query id, truncated to n_max items each.
inline std::vector<IntentSet> mine_intents(const std::vector<ReformulationRecord>& reformulations,
                                           const std::vector<ClickTitleRecord>& click_titles,
                                           const std::vector<Query>& queries, int min_freq = kDefaultMinFreq,
                                           int n_max = kDefaultMaxIntents) {
    auto sets = intents_from_reformulations(reformulations, min_freq);
    auto titles = intents_from_click_titles(click_titles, min_freq);
    sets.insert(sets.end(), std::make_move_iterator(titles.begin()), std::make_move_iterator(titles.end()));
    sets = assign_query_ids(std::move(sets), queries);
    for (auto& s : sets) s = truncate_intents(std::move(s), n_max);
    std::sort(sets.begin(), sets.end(), [](const IntentSet& a, const IntentSet& b) {
        return std::tie(a.query_id, a.source) < std::tie(b.query_id, b.source);
    });
    return sets;
}

// Everything the learning stages read.
struct Dataset {
    std::vector<Query> queries;
    std::vector<ClarificationPane> panes;
    std::map<std::string, QueryIntents> intents;
    EntityLexicon lexicon;
    HistoricalClicks history;
    StatsByPane stats;                    // observed impressions per pane
    std::map<std::string, Grade> grades;  // overall label per pane
};

inline Dataset dataset_from_corpus(const Corpus& corpus, StatsByPane stats) {
    Dataset d;
    d.queries = corpus.queries;
    d.panes = corpus.panes;
    d.intents = group_intents(mine_intents(corpus.reformulations, corpus.click_titles, corpus.queries));
    d.lexicon = corpus.entity_lexicon;
    d.history = historical_clicks_from_titles(corpus.click_titles, corpus.queries);
    d.stats = std::move(stats);
    for (const auto& l : corpus.labels) d.grades[l.pane_id] = l.overall;
    return d;
}

// ─── query split ────────────────────────────────────────────────────────────

enum class QueryRole { rlc, ranker, test };

inline std::string_view to_string(QueryRole r) {
    return r == QueryRole::rlc ? "rlc" : r == QueryRole::ranker ? "ranker" : "test";
}

inline QueryRole parse_query_role(std::string_view s) {
    for (auto r : {QueryRole::rlc, QueryRole::ranker, QueryRole::test})
        if (to_string(r) == s) return r;
    throw InputError("unknown query role '" + std::string(s) + "'");
}

struct SplitConfig {
    double rlc = 0.5;
    double ranker = 0.25;  // test gets the rest
};

// Query ids sorted, shuffled with the seed, then cut by the fractions.
inline std::map<std::string, QueryRole> split_queries(const std::vector<Query>& queries, std::uint64_t seed,
                                                      const SplitConfig& split = {}) {
    if (!(split.rlc >= 0 && split.ranker >= 0 && split.rlc + split.ranker <= 1.0))
        throw InputError("split fractions must be non-negative and sum to at most 1");
    std::vector<std::string> ids;
    for (const auto& q : queries) ids.push_back(q.id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(ids);
    const auto n = static_cast<double>(ids.size());
    const auto a = static_cast<std::size_t>(split.rlc * n);
    const auto b = static_cast<std::size_t>((split.rlc + split.ranker) * n);
    std::map<std::string, QueryRole> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = i < a ? QueryRole::rlc : i < b ? QueryRole::ranker : QueryRole::test;
    return out;
}

// ─── per-stage inputs ───────────────────────────────────────────────────────

namespace pipeline_detail {

inline std::map<std::string, std::vector<const ClarificationPane*>> panes_by_query(const Dataset& d) {
    std::map<std::string, std::vector<const ClarificationPane*>> out;
    for (const auto& p : d.panes) out[p.query_id].push_back(&p);
    return out;
}

inline bool has_role(const std::map<std::string, QueryRole>& roles, const std::string& id, QueryRole role) {
    auto it = roles.find(id);
    return it != roles.end() && it->second == role;
}

inline QueryIntents intents_for(const Dataset& d, const std::string& qid) {
    auto it = d.intents.find(qid);
    if (it != d.intents.end()) return it->second;
    QueryIntents qi;
    qi.reformulation = {qid, IntentSource::reformulation, {}};
    qi.click_title = {qid, IntentSource::click_title, {}};
    return qi;
}

}  // namespace pipeline_detail

// Panes of each selected query labeled by observed engagement rate; panes
// without impressions are left out.
inline std::vector<TrainTriple> engagement_triples(const Dataset& d, const std::map<std::string, QueryRole>& roles,
                                                   QueryRole role) {
    const auto by_query = pipeline_detail::panes_by_query(d);
    std::vector<TrainTriple> out;
    for (const auto& q : d.queries) {
        if (!pipeline_detail::has_role(roles, q.id, role)) continue;
        auto it = by_query.find(q.id);
        if (it == by_query.end()) continue;
        TrainTriple t;
        t.query = q.text;
        t.intents = pipeline_detail::intents_for(d, q.id);
        for (const auto* p : it->second) {
            auto s = d.stats.find(p->id);
            if (s == d.stats.end() || s->second.impressions <= 0) continue;
            t.panes.push_back(*p);
            t.labels.push_back(engagement_rate(s->second));
        }
        if (t.panes.size() >= 2) out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<LabeledQuery> labeled_queries(const Dataset& d, const std::map<std::string, QueryRole>& roles,
                                                 QueryRole role) {
    const auto by_query = pipeline_detail::panes_by_query(d);
    std::vector<LabeledQuery> out;
    for (const auto& q : d.queries) {
        if (!pipeline_detail::has_role(roles, q.id, role)) continue;
        auto it = by_query.find(q.id);
        if (it == by_query.end()) continue;
        LabeledQuery l;
        l.query = q.text;
        l.intents = pipeline_detail::intents_for(d, q.id);
        for (const auto* p : it->second) {
            auto g = d.grades.find(p->id);
            if (g == d.grades.end()) continue;
            l.panes.push_back(*p);
            l.grades.push_back(g->second);
        }
        if (!l.panes.empty()) out.push_back(std::move(l));
    }
    return out;
}

// Features, grade labels and observed engagement for every labeled pane of
// the selected queries. The RLC score is filled in when a model is given.
inline std::vector<EvalQuery> ranking_queries(const Dataset& d, const std::map<std::string, QueryRole>& roles,
                                              QueryRole role, const RlcModel* model = nullptr, int threads = 1) {
    const auto by_query = pipeline_detail::panes_by_query(d);
    std::vector<const Query*> selected;
    for (const auto& q : d.queries)
        if (pipeline_detail::has_role(roles, q.id, role) && by_query.count(q.id)) selected.push_back(&q);
    std::vector<EvalQuery> out(selected.size());
    parallel_for(selected.size(), threads, [&](std::size_t i) {
        const Query& q = *selected[i];
        const auto intents = pipeline_detail::intents_for(d, q.id);
        const auto hist = d.history.find(q.id);
        const UrlClicks none;
        auto& eq = out[i];
        for (const auto* p : by_query.at(q.id)) {
            auto g = d.grades.find(p->id);
            if (g == d.grades.end()) continue;
            std::optional<double> s;
            if (model) s = score(q.text, *p, intents, d.lexicon, *model);
            eq.pane_ids.push_back(p->id);
            eq.features.push_back(extract_features(q, *p, hist == d.history.end() ? none : hist->second, s));
            eq.labels.push_back(static_cast<double>(static_cast<int>(g->second)));
            auto st = d.stats.find(p->id);
            eq.engagement.push_back(st == d.stats.end() ? 0.0 : engagement_rate(st->second));
        }
    });
    out.erase(std::remove_if(out.begin(), out.end(), [](const EvalQuery& q) { return q.pane_ids.empty(); }),
              out.end());
    return out;
}

inline RankingData to_ranking_data(const std::vector<EvalQuery>& queries, bool with_rlc) {
    RankingData rd;
    for (const auto& q : queries) {
        std::vector<std::vector<double>> rows;
        for (const auto& f : q.features) rows.push_back(f.values(with_rlc));
        rd.add_query(rows, q.labels);
    }
    return rd;
}

// ─── the full comparison ────────────────────────────────────────────────────

struct ComparisonConfig {
    std::uint64_t seed = 1;
    SplitConfig split;
    RlcConfig rlc;
    TrainConfig rlc_train;
    LambdaMartConfig lambdamart;
    double ridge = 1e-3;
    int threads = 1;
};

// Desk-scale defaults under which training finishes in well under a minute.
inline ComparisonConfig default_comparison(std::uint64_t seed) {
    ComparisonConfig c;
    c.seed = seed;
    c.rlc.seed = seed;
    c.rlc_train.steps = 600;
    c.rlc_train.adam.lr = 1e-3;
    c.rlc_train.adam.warmup = 60;
    c.rlc_train.batch_pairs = 8;
    c.rlc_train.seed = seed;
    c.lambdamart.trees = 100;
    c.lambdamart.min_leaf = 5;
    return c;
}

struct Comparison {
    TrainReport rlc_report;
    std::vector<EvalResult> rows;  // baseline, linear, LambdaMART w/o RLC, LambdaMART w/ RLC
};

inline constexpr const char* kBaselineMethod = "clarification_estimation";
inline constexpr const char* kLinearMethod = "linear_features";
inline constexpr const char* kWithoutRlcMethod = "lambdamart_without_rlc";
inline constexpr const char* kWithRlcMethod = "lambdamart_with_rlc";

inline Comparison run_comparison(const Dataset& d, const ComparisonConfig& c) {
    const auto roles = split_queries(d.queries, c.seed, c.split);
    Comparison out;
    RlcModel model(c.rlc);
    out.rlc_report = train_pairwise(engagement_triples(d, roles, QueryRole::rlc), model, d.lexicon, c.rlc_train);

    const auto train = ranking_queries(d, roles, QueryRole::ranker, &model, c.threads);
    const auto test = ranking_queries(d, roles, QueryRole::test, &model, c.threads);
    if (test.empty()) throw InputError("no test queries with labeled panes");
    auto lm = c.lambdamart;
    lm.threads = c.threads;
    const auto with = train_lambdamart(to_ranking_data(train, true), lm);
    const auto without = train_lambdamart(to_ranking_data(train, false), lm);
    const auto linear = train_linear(to_ranking_data(train, false), c.ridge);

    const auto base = evaluate_ranker(kBaselineMethod, test, entropy_baseline(), c.threads);
    out.rows.push_back(base);
    out.rows.push_back(evaluate_ranker(kLinearMethod, test, linear_scorer(linear, false), c.threads));
    out.rows.push_back(evaluate_ranker(kWithoutRlcMethod, test, ensemble_scorer(without, false), c.threads));
    out.rows.push_back(evaluate_ranker(kWithRlcMethod, test, ensemble_scorer(with, true), c.threads));
    for (auto& r : out.rows)
        if (base.top_engagement > 0) r.engagement_improvement_pct = engagement_improvement(r, base);
    return out;
}

// Corpus whose engagement is planted from intent coverage and answer
// consistency, with rates observed from relevance-only simulation.
inline Dataset planted_engagement_dataset(std::uint64_t seed, int queries = 400, int panes_per_query = 4,
                                          int impressions_per_pane = 300, int threads = 1) {
    SynthConfig sc;
    sc.queries = queries;
    sc.panes_per_query = panes_per_query;
    sc.swap_fraction = 0.0;
    sc.relevance_mode = RelevanceMode::intent;
    const auto corpus = gen_corpus(sc, seed);
    UserModel um;
    um.kind = UserModelKind::relevance_only;
    return dataset_from_corpus(corpus, simulate_stats(corpus, um, impressions_per_pane, seed, threads));
}

}  // namespace clarify
