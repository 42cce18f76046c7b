#pragma once
// Synthetic queries, panes, intent sources and impression logs drawn from user
// models whose click probabilities are known in closed form.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "intents.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace clarify {

// ─── user models ────────────────────────────────────────────────────────────

enum class UserModelKind { relevance_only, examination, cascade, size_offset_logistic };

inline std::string_view to_string(UserModelKind k) {
    switch (k) {
        case UserModelKind::relevance_only: return "relevance_only";
        case UserModelKind::examination: return "examination";
        case UserModelKind::cascade: return "cascade";
        case UserModelKind::size_offset_logistic: return "size_offset_logistic";
    }
    return "relevance_only";
}

inline UserModelKind parse_user_model_kind(std::string_view s) {
    for (auto k : {UserModelKind::relevance_only, UserModelKind::examination, UserModelKind::cascade,
                   UserModelKind::size_offset_logistic})
        if (to_string(k) == s) return k;
    throw InputError("unknown user model '" + std::string(s) + "'");
}

struct UserModel {
    UserModelKind kind = UserModelKind::relevance_only;
    // examination: probability that position k+1 is examined
    std::vector<double> exam_probs;
    // cascade: probability the user keeps scanning after a click (0 = single click)
    double cascade_continue = 0.0;
    // size_offset_logistic:
    //   P(click a_k) = sigmoid(bias + w_rel*logit(r_k) + w_offset*(k-1) + w_size*(size_k/mean_size - 1))
    double bias = 0.0;
    double w_rel = 1.0;
    double w_offset = 0.0;
    double w_size = 0.0;
};

inline void validate_user_model(const UserModel& m) {
    auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
    if (m.kind == UserModelKind::examination) {
        if (m.exam_probs.empty()) throw InputError("examination model needs exam_probs");
        for (double p : m.exam_probs)
            if (!prob(p)) throw InputError("exam_probs must lie in [0,1]");
    }
    if (!prob(m.cascade_continue)) throw InputError("cascade_continue must lie in [0,1]");
    for (double w : {m.bias, m.w_rel, m.w_offset, m.w_size})
        if (!std::isfinite(w)) throw InputError("logistic weights must be finite");
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit_clamped(double p) {
    p = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return std::log(p / (1.0 - p));
}

// Exact marginal click probability of each answer in pane order.
inline std::vector<double> oracle_click_rates(const UserModel& model, const ClarificationPane& pane,
                                              const std::vector<double>& relevance) {
    const auto k = static_cast<std::size_t>(pane.answer_count());
    if (relevance.size() != k) throw InputError("relevance vector length differs from answer count");
    std::vector<double> p(k);
    switch (model.kind) {
        case UserModelKind::relevance_only:
            p = relevance;
            break;
        case UserModelKind::examination:
            if (model.exam_probs.size() < k) throw InputError("exam_probs shorter than pane " + pane.id);
            for (std::size_t i = 0; i < k; ++i) p[i] = model.exam_probs[i] * relevance[i];
            break;
        case UserModelKind::cascade: {
            double reach = 1.0;
            for (std::size_t i = 0; i < k; ++i) {
                p[i] = reach * relevance[i];
                reach *= 1.0 - relevance[i] * (1.0 - model.cascade_continue);
            }
            break;
        }
        case UserModelKind::size_offset_logistic: {
            double mean = 0.0;
            for (const auto& a : pane.answers) mean += a.render_size;
            mean /= static_cast<double>(k);
            for (std::size_t i = 0; i < k; ++i)
                p[i] = sigmoid(model.bias + model.w_rel * logit_clamped(relevance[i]) +
                               model.w_offset * static_cast<double>(i) +
                               model.w_size * (pane.answers[i].render_size / mean - 1.0));
            break;
        }
    }
    return p;
}

// One impression's answer clicks (sorted 1-based positions).
inline std::vector<int> sample_answer_clicks(const UserModel& model, const std::vector<double>& rates,
                                             const std::vector<double>& relevance, Rng& rng) {
    std::vector<int> clicks;
    if (model.kind == UserModelKind::cascade) {
        for (std::size_t i = 0; i < relevance.size(); ++i) {
            if (rng.bernoulli(relevance[i])) {
                clicks.push_back(static_cast<int>(i) + 1);
                if (!rng.bernoulli(model.cascade_continue)) break;
            }
        }
        return clicks;
    }
    for (std::size_t i = 0; i < rates.size(); ++i)
        if (rng.bernoulli(rates[i])) clicks.push_back(static_cast<int>(i) + 1);
    return clicks;
}

// ─── corpus configuration ───────────────────────────────────────────────────

enum class RelevanceMode { beta, intent };

struct SynthConfig {
    int queries = 100;
    int panes_per_query = 2;  // distinct answer sets; swap variants come on top
    std::array<double, 4> answer_count_weights{1, 1, 1, 1};  // K = 2..5
    std::array<double, 8> template_weights{3, 2, 2, 1, 1, 1, 1, 1};  // T1..T7, other
    double swap_fraction = 0.5;
    double question_fraction = 0.15;
    double ambiguous_fraction = 0.3;
    double faceted_fraction = 0.6;
    std::array<double, 3> traffic_weights{1, 1, 1};  // head, torso, tail
    RelevanceMode relevance_mode = RelevanceMode::beta;
    double relevance_alpha = 1.0;
    double relevance_beta = 3.0;
    int facets = 48;
    int entity_types = 6;
    int intents_min = 2;
    int intents_max = 7;
    // intent mode: engagement = sigmoid(base + w_cov*coverage + w_cons*consistency
    //                                   + interaction(template, ambiguity) + effect(K) + noise)
    double base_logit = -1.4;
    double coverage_weight = 3.0;
    double consistency_weight = 1.0;
    double interaction_weight = 1.0;
    double answer_count_effect = 1.0;
    double engagement_noise = 0.3;
    double reformulation_rate = 0.05;
    double result_click_rate = 0.6;
    double short_dwell_fraction = 0.2;
    std::int64_t start_time = 1577836800;
};

inline std::string_view to_string(RelevanceMode m) { return m == RelevanceMode::beta ? "beta" : "intent"; }

inline RelevanceMode parse_relevance_mode(std::string_view s) {
    if (s == "beta") return RelevanceMode::beta;
    if (s == "intent") return RelevanceMode::intent;
    throw InputError("unknown relevance_mode '" + std::string(s) + "'");
}

inline void validate_config(const SynthConfig& c) {
    auto frac = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
    if (c.queries < 1) throw InputError("queries must be >= 1");
    if (c.panes_per_query < 1) throw InputError("panes_per_query must be >= 1");
    if (!frac(c.swap_fraction)) throw InputError("swap_fraction must lie in [0,1]");
    if (!frac(c.question_fraction)) throw InputError("question_fraction must lie in [0,1]");
    if (!frac(c.ambiguous_fraction) || !frac(c.faceted_fraction) ||
        c.ambiguous_fraction + c.faceted_fraction > 1.0)
        throw InputError("ambiguous_fraction + faceted_fraction must lie in [0,1]");
    if (!frac(c.reformulation_rate) || !frac(c.result_click_rate) || !frac(c.short_dwell_fraction))
        throw InputError("event rates must lie in [0,1]");
    auto weights_ok = [](auto& w) {
        double s = 0;
        for (double x : w) {
            if (!(x >= 0.0) || !std::isfinite(x)) return false;
            s += x;
        }
        return s > 0;
    };
    if (!weights_ok(c.answer_count_weights)) throw InputError("answer_count_weights must be non-negative, not all 0");
    if (!weights_ok(c.template_weights)) throw InputError("template_weights must be non-negative, not all 0");
    if (!weights_ok(c.traffic_weights)) throw InputError("traffic_weights must be non-negative, not all 0");
    if (!(c.relevance_alpha > 0) || !(c.relevance_beta > 0)) throw InputError("Beta parameters must be > 0");
    if (c.entity_types < 1 || c.entity_types > 8) throw InputError("entity_types must lie in [1,8]");
    if (c.facets < kMaxAnswers * c.entity_types) throw InputError("facets must be >= 5 * entity_types");
    if (c.intents_min < 1 || c.intents_max < c.intents_min || c.intents_max > c.facets)
        throw InputError("need 1 <= intents_min <= intents_max <= facets");
    for (double w : {c.base_logit, c.coverage_weight, c.consistency_weight, c.interaction_weight,
                     c.answer_count_effect, c.engagement_noise})
        if (!std::isfinite(w)) throw InputError("engagement weights must be finite");
}

// ─── corpus ─────────────────────────────────────────────────────────────────

struct SwapPair {
    std::string query_id;
    std::string pane_c;
    std::string pane_c_prime;
    int swap_index = 1;  // C_i = C'_{i+1}
};

struct LatentIntent {
    std::string facet;
    double share = 0.0;  // shares sum to 1 per query
};

struct Corpus {
    std::vector<Query> queries;
    std::vector<ClarificationPane> panes;
    std::map<std::string, std::vector<double>> relevance;  // pane id -> per-answer relevance
    std::map<std::string, double> engagement;              // pane id -> latent engagement probability
    std::vector<SwapPair> swap_pairs;
    std::map<std::string, std::vector<LatentIntent>> latent_intents;  // query id -> intents
    std::vector<ReformulationRecord> reformulations;
    std::vector<ClickTitleRecord> click_titles;
    EntityLexicon entity_lexicon;
    std::vector<PaneLabels> labels;
};

namespace synth_detail {

inline const std::array<const char*, 8> kEntityTypeNames = {"brand", "place", "person", "product",
                                                             "activity", "topic", "event", "organization"};

inline std::string make_word(Rng& rng, int min_syl, int max_syl) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::string w;
    const int n = rng.uniform_int(min_syl, max_syl);
    for (int s = 0; s < n; ++s) {
        w.push_back(consonants[rng.below(consonants.size())]);
        w.push_back(vowels[rng.below(vowels.size())]);
    }
    return w;
}

// Planted template x ambiguity interaction; rows ambiguous / faceted / unknown.
inline double interaction(Template t, AmbiguityClass a) {
    static constexpr double table[3][8] = {
        {-0.2, 0.7, -0.3, -0.4, 0.0, 0.1, 0.3, -0.3},
        {0.5, -0.5, 0.3, 0.4, -0.1, 0.0, -0.3, -0.3},
        {0.1, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, -0.2},
    };
    return table[static_cast<int>(a)][static_cast<int>(t)];
}

// Non-monotone effect of the number of answers.
inline double answer_count_effect(int k) {
    static constexpr double effect[4] = {-0.4, 0.35, 0.1, -0.25};
    return effect[k - kMinAnswers];
}

inline Tokens question_for(Template t, const Tokens& subject) {
    const std::string s = join(subject);
    std::string q;
    switch (t) {
        case Template::T1: q = "what would you like to know about " + s; break;
        case Template::T2: q = "which " + s + " do you mean"; break;
        case Template::T3: q = "which " + s + " are you looking for"; break;
        case Template::T4: q = "what do you want to do with " + s; break;
        case Template::T5: q = "who are you shopping for"; break;
        case Template::T6: q = "what are you trying to do"; break;
        case Template::T7: q = "do you have " + s + " in mind"; break;
        case Template::other: q = "select one option for " + s; break;
    }
    return tokenize(q);
}

inline std::string title_case(const std::string& text) {
    std::string out = text;
    bool start = true;
    for (auto& c : out) {
        if (start && std::isalpha(static_cast<unsigned char>(c))) c = static_cast<char>(std::toupper(c));
        start = c == ' ';
    }
    return out;
}

inline std::string pane_id(int query_idx, int pane_idx) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "q%06d-p%d", query_idx, pane_idx);
    return buf;
}

inline std::string query_id(int query_idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%06d", query_idx);
    return buf;
}

struct Vocabulary {
    std::vector<std::string> facets;
    std::vector<int> facet_type;
    std::vector<double> popularity;
    std::vector<std::vector<int>> by_type;
};

inline Vocabulary make_vocabulary(const SynthConfig& c, Rng& rng, std::set<std::string>& used) {
    Vocabulary v;
    while (static_cast<int>(v.facets.size()) < c.facets) {
        std::string f = make_word(rng, 2, 3);
        if (rng.bernoulli(0.3)) f += " " + make_word(rng, 2, 3);
        if (!used.insert(f).second) continue;
        for (const auto& part : tokenize(f)) used.insert(part);
        v.facets.push_back(f);
    }
    v.by_type.assign(static_cast<std::size_t>(c.entity_types), {});
    for (int f = 0; f < c.facets; ++f) {
        const int t = f % c.entity_types;
        v.facet_type.push_back(t);
        v.by_type[static_cast<std::size_t>(t)].push_back(f);
        v.popularity.push_back(1.0 / std::pow(static_cast<double>(f + 1), 0.8));
    }
    return v;
}

}  // namespace synth_detail

// Deterministic for (config, seed). Every pane gets a ground-truth relevance per
// answer; panes of swap-flagged queries get one adjacent-swap variant each.
inline Corpus gen_corpus(const SynthConfig& config, std::uint64_t seed) {
    using namespace synth_detail;
    validate_config(config);
    Corpus corpus;
    Rng vocab_rng(derive_seed(seed, "vocabulary"));
    std::set<std::string> used;
    const Vocabulary vocab = make_vocabulary(config, vocab_rng, used);
    for (int f = 0; f < config.facets; ++f)
        corpus.entity_lexicon[vocab.facets[static_cast<std::size_t>(f)]] =
            kEntityTypeNames[static_cast<std::size_t>(vocab.facet_type[static_cast<std::size_t>(f)]) %
                             kEntityTypeNames.size()];

    // Query texts are drawn sequentially so uniqueness does not depend on scheduling.
    Rng query_rng(derive_seed(seed, "queries"));
    std::vector<Tokens> subjects;
    std::set<std::string> seen_queries;
    while (static_cast<int>(subjects.size()) < config.queries) {
        Tokens words;
        const int n = 1 + static_cast<int>(query_rng.categorical(std::array<double, 3>{4, 3, 1}));
        for (int i = 0; i < n; ++i) words.push_back(make_word(query_rng, 2, 3));
        bool clash = false;
        for (const auto& w : words) clash = clash || used.count(w) > 0;
        if (clash || !seen_queries.insert(join(words)).second) continue;
        subjects.push_back(std::move(words));
    }

    std::vector<double> k_weights(config.answer_count_weights.begin(), config.answer_count_weights.end());
    std::vector<double> t_weights(config.template_weights.begin(), config.template_weights.end());
    std::vector<double> traffic(config.traffic_weights.begin(), config.traffic_weights.end());
    std::vector<double> base_engagement;  // for label thresholds

    for (int qi = 0; qi < config.queries; ++qi) {
        Rng rng(derive_seed(seed, "query:" + std::to_string(qi)));
        const Tokens& subject = subjects[static_cast<std::size_t>(qi)];
        Query q;
        q.id = query_id(qi);
        q.is_question = rng.bernoulli(config.question_fraction);
        q.text = q.is_question ? Tokens{"what", "is"} : Tokens{};
        q.text.insert(q.text.end(), subject.begin(), subject.end());
        const double u = rng.uniform();
        q.ambiguity_class = u < config.ambiguous_fraction ? AmbiguityClass::ambiguous
                            : u < config.ambiguous_fraction + config.faceted_fraction ? AmbiguityClass::faceted
                                                                                      : AmbiguityClass::unknown;
        q.traffic_class = static_cast<TrafficClass>(rng.categorical(traffic));
        const std::string qtext = join(q.text);

        // Latent intents: facets drawn by global popularity, weight perturbed per query.
        const int m = rng.uniform_int(config.intents_min, config.intents_max);
        std::vector<int> intent_facets;
        std::vector<double> pop = vocab.popularity;
        for (int j = 0; j < m; ++j) {
            const auto f = static_cast<int>(rng.categorical(pop));
            pop[static_cast<std::size_t>(f)] = 0.0;
            intent_facets.push_back(f);
        }
        std::map<int, double> share;
        double total = 0.0;
        for (int f : intent_facets) {
            const double w = vocab.popularity[static_cast<std::size_t>(f)] * std::exp(0.5 * rng.normal());
            share[f] = w;
            total += w;
        }
        auto& latent = corpus.latent_intents[q.id];
        for (int f : intent_facets) {
            share[f] /= total;
            latent.push_back({vocab.facets[static_cast<std::size_t>(f)], share[f]});
        }

        // Intent evidence: reformulations "q facet" and clicked titles "Q Facet - SiteN".
        for (const auto& li : latent) {
            const auto freq = std::max<long long>(1, std::llround(40.0 * li.share * std::exp(0.3 * rng.normal())));
            if (freq >= 4 && rng.bernoulli(0.3)) {
                corpus.reformulations.push_back({qtext, qtext + " " + li.facet, freq / 2});
                corpus.reformulations.push_back({qtext, qtext + " " + li.facet, freq - freq / 2});
            } else {
                corpus.reformulations.push_back({qtext, qtext + " " + li.facet, freq});
            }
            const int sites = rng.uniform_int(1, 2);
            for (int s = 0; s < sites; ++s) {
                const int site = rng.uniform_int(1, 9);
                std::string slug = qtext + "/" + li.facet;
                std::replace(slug.begin(), slug.end(), ' ', '-');
                const auto clicks = std::max<long long>(
                    1, std::llround(30.0 * li.share * std::exp(0.3 * rng.normal()) / sites));
                corpus.click_titles.push_back({qtext, "https://site" + std::to_string(site) + ".example/" + slug,
                                               title_case(qtext + " " + li.facet) + " - Site" +
                                                   std::to_string(site),
                                               clicks});
            }
        }
        {
            const auto& noise = vocab.facets[rng.below(vocab.facets.size())];
            corpus.reformulations.push_back({qtext, qtext + " " + noise, 1});
            if (subjects.size() > 1) {
                const auto other = (static_cast<std::size_t>(qi) + 1 + rng.below(subjects.size() - 1)) % subjects.size();
                corpus.reformulations.push_back({qtext, join(subjects[other]), 1 + static_cast<long long>(rng.below(5))});
            }
            corpus.click_titles.push_back({qtext, "https://misc.example/" + std::to_string(qi),
                                           title_case(qtext) + " | Misc", 1});
        }

        // Panes.
        std::set<std::string> answer_sets;
        std::vector<std::size_t> base_panes;
        for (int pj = 0, attempts = 0; pj < config.panes_per_query && attempts < 50 * config.panes_per_query;
             ++attempts) {
            const int k = kMinAnswers + static_cast<int>(rng.categorical(k_weights));
            std::vector<int> chosen;
            if (config.relevance_mode == RelevanceMode::beta) {
                std::vector<int> all(static_cast<std::size_t>(config.facets));
                for (int f = 0; f < config.facets; ++f) all[static_cast<std::size_t>(f)] = f;
                rng.shuffle(all);
                chosen.assign(all.begin(), all.begin() + k);
            } else {
                std::vector<int> pool;
                if (rng.bernoulli(0.4)) {
                    std::vector<double> sw;
                    for (int f : intent_facets) sw.push_back(share[f]);
                    const int f0 = intent_facets[rng.categorical(sw)];
                    pool = vocab.by_type[static_cast<std::size_t>(vocab.facet_type[static_cast<std::size_t>(f0)])];
                } else {
                    for (int f = 0; f < config.facets; ++f) pool.push_back(f);
                }
                const double hit = rng.uniform(0.1, 1.0);
                for (int slot = 0; slot < k; ++slot) {
                    std::vector<int> intents_left, others;
                    for (int f : pool) {
                        if (std::find(chosen.begin(), chosen.end(), f) != chosen.end()) continue;
                        (share.count(f) ? intents_left : others).push_back(f);
                    }
                    if (!intents_left.empty() && (others.empty() || rng.bernoulli(hit))) {
                        std::vector<double> sw;
                        for (int f : intents_left) sw.push_back(share[f]);
                        chosen.push_back(intents_left[rng.categorical(sw)]);
                    } else {
                        chosen.push_back(others[rng.below(others.size())]);
                    }
                }
                rng.shuffle(chosen);
            }
            std::vector<std::string> key;
            for (int f : chosen) key.push_back(vocab.facets[static_cast<std::size_t>(f)]);
            std::sort(key.begin(), key.end());
            std::string joined;
            for (const auto& s : key) joined += s + "\t";
            if (!answer_sets.insert(joined).second) continue;

            ClarificationPane pane;
            pane.id = pane_id(qi, pj);
            pane.query_id = q.id;
            pane.template_id = kAllTemplates[rng.categorical(t_weights)];
            pane.question_text = question_for(pane.template_id, subject);
            std::vector<double> rel;
            for (int a = 0; a < k; ++a) {
                const auto f = static_cast<std::size_t>(chosen[static_cast<std::size_t>(a)]);
                CandidateAnswer ans;
                ans.text = tokenize(vocab.facets[f]);
                ans.entity_type = corpus.entity_lexicon[vocab.facets[f]];
                ans.render_size = default_render_size(ans.text);
                ans.position = a + 1;
                pane.answers.push_back(std::move(ans));
            }
            double engagement;
            if (config.relevance_mode == RelevanceMode::beta) {
                double miss = 1.0;
                for (int a = 0; a < k; ++a) {
                    rel.push_back(rng.beta(config.relevance_alpha, config.relevance_beta));
                    miss *= 1.0 - rel.back();
                }
                engagement = 1.0 - miss;
            } else {
                double coverage = 0.0;
                std::map<int, int> type_count;
                int max_type = 0;
                for (int f : chosen) {
                    if (share.count(f)) coverage += share[f];
                    max_type = std::max(max_type, ++type_count[vocab.facet_type[static_cast<std::size_t>(f)]]);
                }
                const double consistency = static_cast<double>(max_type - 1) / static_cast<double>(k - 1);
                const double z = config.base_logit + config.coverage_weight * coverage +
                                 config.consistency_weight * consistency +
                                 config.interaction_weight * interaction(pane.template_id, q.ambiguity_class) +
                                 config.answer_count_effect * answer_count_effect(k) +
                                 config.engagement_noise * rng.normal();
                engagement = sigmoid(z);
                // Split engagement across answers so that 1 - prod(1 - r_k) = engagement.
                std::vector<double> s;
                double ssum = 0.0;
                for (int f : chosen) {
                    s.push_back((share.count(f) ? share[f] : 0.0) + 0.05);
                    ssum += s.back();
                }
                for (double sk : s) rel.push_back(1.0 - std::pow(1.0 - engagement, sk / ssum));
            }
            corpus.relevance[pane.id] = rel;
            corpus.engagement[pane.id] = engagement;
            base_engagement.push_back(engagement);
            base_panes.push_back(corpus.panes.size());
            corpus.panes.push_back(std::move(pane));
            ++pj;
        }

        if (rng.bernoulli(config.swap_fraction)) {
            for (std::size_t bi : base_panes) {
                const ClarificationPane base = corpus.panes[bi];
                const int i = rng.uniform_int(1, base.answer_count() - 1);
                auto variant = with_adjacent_swap(base, i, base.id + "-s" + std::to_string(i));
                auto rel = corpus.relevance[base.id];
                std::swap(rel[static_cast<std::size_t>(i - 1)], rel[static_cast<std::size_t>(i)]);
                corpus.relevance[variant.id] = rel;
                corpus.engagement[variant.id] = corpus.engagement[base.id];
                corpus.swap_pairs.push_back({q.id, base.id, variant.id, i});
                corpus.panes.push_back(std::move(variant));
            }
        }
        corpus.queries.push_back(std::move(q));
    }

    // Overall labels by engagement tercile; landing labels by answer relevance.
    std::sort(base_engagement.begin(), base_engagement.end());
    const auto at = [&](double f) {
        return base_engagement[static_cast<std::size_t>(f * static_cast<double>(base_engagement.size() - 1))];
    };
    const double lo = at(1.0 / 3.0), hi = at(2.0 / 3.0);
    for (const auto& p : corpus.panes) {
        PaneLabels l;
        l.pane_id = p.id;
        const double e = corpus.engagement[p.id];
        l.overall = e > hi ? Grade::Good : e > lo ? Grade::Fair : Grade::Bad;
        for (double r : corpus.relevance[p.id]) {
            const double share_of_pane = r / std::max(e, 1e-12);
            l.landing.push_back(share_of_pane >= 0.3 ? Grade::Good : share_of_pane >= 0.1 ? Grade::Fair : Grade::Bad);
        }
        corpus.labels.push_back(std::move(l));
    }
    return corpus;
}

// ─── impression simulation ──────────────────────────────────────────────────

namespace synth_detail {

inline void check_simulation_inputs(const Corpus& corpus, const UserModel& model, int n_per_pane) {
    if (n_per_pane < 1) throw InputError("n_per_pane must be >= 1");
    validate_user_model(model);
    for (const auto& p : corpus.panes)
        if (!corpus.relevance.count(p.id)) throw InputError("no ground truth for pane " + p.id);
}

}  // namespace synth_detail

// Per-pane answer-click counts only. Uses the same per-pane stream as
// simulate_impressions, so both yield identical statistics for a seed.
inline StatsByPane simulate_stats(const Corpus& corpus, const UserModel& model, int n_per_pane, std::uint64_t seed,
                                  int threads = 1) {
    synth_detail::check_simulation_inputs(corpus, model, n_per_pane);
    std::vector<EngagementStats> stats(corpus.panes.size());
    parallel_for(corpus.panes.size(), threads, [&](std::size_t idx) {
        const auto& pane = corpus.panes[idx];
        const auto& rel = corpus.relevance.at(pane.id);
        const auto rates = oracle_click_rates(model, pane, rel);
        Rng rng(derive_seed(seed, "answers:" + pane.id));
        auto& s = stats[idx];
        s.per_position_clicks.assign(rates.size(), 0);
        for (int n = 0; n < n_per_pane; ++n) {
            const auto clicks = sample_answer_clicks(model, rates, rel, rng);
            ++s.impressions;
            if (!clicks.empty()) ++s.engaged_impressions;
            for (int c : clicks) ++s.per_position_clicks[static_cast<std::size_t>(c - 1)];
        }
    });
    StatsByPane out;
    for (std::size_t i = 0; i < stats.size(); ++i) out[corpus.panes[i].id] = std::move(stats[i]);
    return out;
}

// Full impression records, pane-major in corpus order.
inline std::vector<ImpressionRecord> simulate_impressions(const Corpus& corpus, const UserModel& model,
                                                          int n_per_pane, std::uint64_t seed,
                                                          const SynthConfig& config = {}, int threads = 1) {
    synth_detail::check_simulation_inputs(corpus, model, n_per_pane);
    std::map<std::string, const Query*> queries;
    for (const auto& q : corpus.queries) queries[q.id] = &q;
    std::map<std::string, std::vector<std::pair<std::string, double>>> urls;
    for (const auto& c : corpus.click_titles) urls[c.query].emplace_back(c.url, static_cast<double>(c.freq));

    std::vector<std::vector<ImpressionRecord>> per_pane(corpus.panes.size());
    parallel_for(corpus.panes.size(), threads, [&](std::size_t idx) {
        const auto& pane = corpus.panes[idx];
        const auto& rel = corpus.relevance.at(pane.id);
        const auto rates = oracle_click_rates(model, pane, rel);
        auto qit = queries.find(pane.query_id);
        if (qit == queries.end()) throw InputError("pane " + pane.id + " references unknown query");
        const Query& q = *qit->second;
        const std::string qtext = join(q.text);
        const auto uit = urls.find(qtext);
        std::vector<double> url_w;
        if (uit != urls.end())
            for (const auto& [u, w] : uit->second) url_w.push_back(w);
        const auto lit = corpus.latent_intents.find(q.id);

        Rng answers(derive_seed(seed, "answers:" + pane.id));
        Rng serp(derive_seed(seed, "serp:" + pane.id));
        auto& out = per_pane[idx];
        out.reserve(static_cast<std::size_t>(n_per_pane));
        for (int n = 0; n < n_per_pane; ++n) {
            ImpressionRecord r;
            r.pane_id = pane.id;
            r.timestamp = config.start_time + static_cast<std::int64_t>(serp.below(30 * 86400));
            r.answer_clicks = sample_answer_clicks(model, rates, rel, answers);
            if (serp.bernoulli(config.result_click_rate)) {
                const int clicks = 1 + (serp.bernoulli(0.3) ? 1 : 0);
                for (int c = 0; c < clicks; ++c) {
                    ResultClick rc;
                    rc.url = url_w.empty() ? "https://misc.example/" + pane.query_id
                                           : uit->second[serp.categorical(url_w)].first;
                    const double dwell = serp.bernoulli(config.short_dwell_fraction) ? serp.exponential(8.0)
                                                                                     : serp.exponential(90.0);
                    rc.dwell_seconds = std::round(dwell * 10.0) / 10.0;
                    r.result_clicks.push_back(std::move(rc));
                }
            }
            if (serp.bernoulli(config.reformulation_rate)) {
                Reformulation ref;
                ref.new_query_text = q.text;
                if (lit != corpus.latent_intents.end() && !lit->second.empty()) {
                    auto extra = tokenize(lit->second[serp.below(lit->second.size())].facet);
                    ref.new_query_text.insert(ref.new_query_text.end(), extra.begin(), extra.end());
                }
                ref.delta_seconds = std::round(serp.exponential(150.0));
                r.reformulation = std::move(ref);
            }
            out.push_back(std::move(r));
        }
    });
    std::vector<ImpressionRecord> log;
    std::size_t total = 0;
    for (const auto& v : per_pane) total += v.size();
    log.reserve(total);
    for (auto& v : per_pane)
        for (auto& r : v) log.push_back(std::move(r));
    return log;
}

// ─── serialization of configs ───────────────────────────────────────────────

inline void to_json(Json& j, const UserModel& m) {
    j = Json{{"kind", to_string(m.kind)}, {"exam_probs", m.exam_probs}, {"cascade_continue", m.cascade_continue},
             {"bias", m.bias}, {"w_rel", m.w_rel}, {"w_offset", m.w_offset}, {"w_size", m.w_size}};
}

inline void from_json(const Json& j, UserModel& m) {
    m = UserModel{};
    if (j.contains("kind")) m.kind = parse_user_model_kind(j.at("kind").get<std::string>());
    m.exam_probs = j.value("exam_probs", m.exam_probs);
    m.cascade_continue = j.value("cascade_continue", m.cascade_continue);
    m.bias = j.value("bias", m.bias);
    m.w_rel = j.value("w_rel", m.w_rel);
    m.w_offset = j.value("w_offset", m.w_offset);
    m.w_size = j.value("w_size", m.w_size);
    validate_user_model(m);
}

inline void to_json(Json& j, const SynthConfig& c) {
    j = Json{{"queries", c.queries},
             {"panes_per_query", c.panes_per_query},
             {"answer_count_weights", c.answer_count_weights},
             {"template_weights", c.template_weights},
             {"swap_fraction", c.swap_fraction},
             {"question_fraction", c.question_fraction},
             {"ambiguous_fraction", c.ambiguous_fraction},
             {"faceted_fraction", c.faceted_fraction},
             {"traffic_weights", c.traffic_weights},
             {"relevance_mode", to_string(c.relevance_mode)},
             {"relevance_alpha", c.relevance_alpha},
             {"relevance_beta", c.relevance_beta},
             {"facets", c.facets},
             {"entity_types", c.entity_types},
             {"intents_min", c.intents_min},
             {"intents_max", c.intents_max},
             {"base_logit", c.base_logit},
             {"coverage_weight", c.coverage_weight},
             {"consistency_weight", c.consistency_weight},
             {"interaction_weight", c.interaction_weight},
             {"answer_count_effect", c.answer_count_effect},
             {"engagement_noise", c.engagement_noise},
             {"reformulation_rate", c.reformulation_rate},
             {"result_click_rate", c.result_click_rate},
             {"short_dwell_fraction", c.short_dwell_fraction},
             {"start_time", c.start_time}};
}

inline void from_json(const Json& j, SynthConfig& c) {
    c = SynthConfig{};
    static const std::set<std::string> known = {
        "queries", "panes_per_query", "answer_count_weights", "template_weights", "swap_fraction",
        "question_fraction", "ambiguous_fraction", "faceted_fraction", "traffic_weights", "relevance_mode",
        "relevance_alpha", "relevance_beta", "facets", "entity_types", "intents_min", "intents_max",
        "base_logit", "coverage_weight", "consistency_weight", "interaction_weight", "answer_count_effect",
        "engagement_noise", "reformulation_rate", "result_click_rate", "short_dwell_fraction", "start_time"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw InputError("unknown synth config key '" + key + "'");
    c.queries = j.value("queries", c.queries);
    c.panes_per_query = j.value("panes_per_query", c.panes_per_query);
    c.answer_count_weights = j.value("answer_count_weights", c.answer_count_weights);
    c.template_weights = j.value("template_weights", c.template_weights);
    c.swap_fraction = j.value("swap_fraction", c.swap_fraction);
    c.question_fraction = j.value("question_fraction", c.question_fraction);
    c.ambiguous_fraction = j.value("ambiguous_fraction", c.ambiguous_fraction);
    c.faceted_fraction = j.value("faceted_fraction", c.faceted_fraction);
    c.traffic_weights = j.value("traffic_weights", c.traffic_weights);
    if (j.contains("relevance_mode")) c.relevance_mode = parse_relevance_mode(j.at("relevance_mode").get<std::string>());
    c.relevance_alpha = j.value("relevance_alpha", c.relevance_alpha);
    c.relevance_beta = j.value("relevance_beta", c.relevance_beta);
    c.facets = j.value("facets", c.facets);
    c.entity_types = j.value("entity_types", c.entity_types);
    c.intents_min = j.value("intents_min", c.intents_min);
    c.intents_max = j.value("intents_max", c.intents_max);
    c.base_logit = j.value("base_logit", c.base_logit);
    c.coverage_weight = j.value("coverage_weight", c.coverage_weight);
    c.consistency_weight = j.value("consistency_weight", c.consistency_weight);
    c.interaction_weight = j.value("interaction_weight", c.interaction_weight);
    c.answer_count_effect = j.value("answer_count_effect", c.answer_count_effect);
    c.engagement_noise = j.value("engagement_noise", c.engagement_noise);
    c.reformulation_rate = j.value("reformulation_rate", c.reformulation_rate);
    c.result_click_rate = j.value("result_click_rate", c.result_click_rate);
    c.short_dwell_fraction = j.value("short_dwell_fraction", c.short_dwell_fraction);
    c.start_time = j.value("start_time", c.start_time);
    validate_config(c);
}

}  // namespace clarify
