#pragma once
// RLC: scores a (query, clarification pane) pair from two intent-coverage
// encoders (one per intent source) and an answer-consistency encoder, trained
// with a pairwise softmax loss on engagement and then on human labels.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "intents.hpp"
#include "nn.hpp"

namespace clarify {

inline const std::string kNullToken = "<null>";
inline const std::string kNoTypeToken = "<notype>";

struct RlcConfig {
    std::size_t dim = 64;
    std::size_t heads = 2;
    std::size_t layers = 1;  // encoder layers per stage
    std::size_t ff_dim = 128;
    std::size_t embed_dim = 64;
    std::size_t buckets = 8192;
    int K = kMaxAnswers;
    int n_max = kDefaultMaxIntents;
    std::uint64_t seed = 1;
};

inline void validate_rlc_config(const RlcConfig& c) {
    if (c.dim == 0 || c.ff_dim == 0 || c.embed_dim == 0 || c.buckets == 0) throw InputError("RLC dims must be positive");
    if (c.heads == 0 || c.dim % c.heads != 0)
        throw InputError("head count " + std::to_string(c.heads) + " does not divide model dim " + std::to_string(c.dim));
    if (c.layers == 0) throw InputError("RLC needs at least one encoder layer per stage");
    if (c.K < kMinAnswers) throw InputError("K must be >= 2");
    if (c.n_max < 1) throw InputError("n_max must be >= 1");
}

inline void to_json(Json& j, const RlcConfig& c) {
    j = Json{{"dim", c.dim},       {"heads", c.heads},         {"layers", c.layers}, {"ff_dim", c.ff_dim},
             {"embed_dim", c.embed_dim}, {"buckets", c.buckets}, {"K", c.K},           {"n_max", c.n_max},
             {"seed", c.seed}};
}

inline void from_json(const Json& j, RlcConfig& c) {
    RlcConfig d;
    for (const auto& [k, v] : j.items()) {
        if (k == "dim") d.dim = v.get<std::size_t>();
        else if (k == "heads") d.heads = v.get<std::size_t>();
        else if (k == "layers") d.layers = v.get<std::size_t>();
        else if (k == "ff_dim") d.ff_dim = v.get<std::size_t>();
        else if (k == "embed_dim") d.embed_dim = v.get<std::size_t>();
        else if (k == "buckets") d.buckets = v.get<std::size_t>();
        else if (k == "K") d.K = v.get<int>();
        else if (k == "n_max") d.n_max = v.get<int>();
        else if (k == "seed") d.seed = v.get<std::uint64_t>();
        else throw InputError("unknown RLC config key '" + k + "'");
    }
    validate_rlc_config(d);
    c = d;
}

// ─── model inputs ────────────────────────────────────────────────────────────

struct IceInput {
    std::vector<Tokens> seqs;                // intent-major: seqs[j*answers + k]
    std::vector<std::uint8_t> answer_mask;   // per answer slot
    std::vector<double> weights;             // normalized; 0 for padding
    std::vector<std::uint8_t> intent_mask;   // per intent slot
    bool substituted_uniform = false;
};

struct AceInput {
    std::vector<Tokens> seqs;  // question first, then the answer slots
    std::vector<std::uint8_t> mask;
};

struct PaneInput {
    std::array<IceInput, 2> ice;  // reformulation, click_title
    AceInput ace;
};

namespace rlc_detail {

inline Tokens triplet_tokens(const Tokens& q, const Tokens& a, const Tokens& intent) {
    Tokens t{kBeginToken};
    t.insert(t.end(), q.begin(), q.end());
    t.push_back(kSepToken);
    t.insert(t.end(), a.begin(), a.end());
    t.push_back(kSepToken);
    t.insert(t.end(), intent.begin(), intent.end());
    t.push_back(kEndToken);
    return t;
}

inline std::string entity_type_of(const CandidateAnswer& a, const EntityLexicon& lexicon) {
    auto it = lexicon.find(join(a.text));
    if (it != lexicon.end()) return it->second;
    return a.entity_type.value_or("");
}

inline IceInput ice_input(const Tokens& query, const std::vector<Tokens>& answers, std::size_t answer_slots,
                          const IntentSet& set, std::size_t intent_slots) {
    IceInput in;
    auto items = truncate_intents(set, static_cast<int>(intent_slots)).items;
    std::vector<Tokens> intents;
    std::vector<double> raw;
    for (const auto& it : items) {
        intents.push_back(tokenize(it.text));
        raw.push_back(it.weight);
    }
    if (intents.empty()) {  // nothing mined: a single empty intent stands in
        intents.emplace_back();
        raw.push_back(0.0);
    }
    double total = 0.0;
    for (double w : raw) total += w;
    if (!(total > 0.0)) {
        in.substituted_uniform = true;
        raw.assign(raw.size(), 1.0);
        total = static_cast<double>(raw.size());
    }
    for (std::size_t k = 0; k < answer_slots; ++k) in.answer_mask.push_back(k < answers.size() ? 1 : 0);
    for (std::size_t j = 0; j < intent_slots; ++j) {
        const bool real = j < intents.size();
        in.intent_mask.push_back(real ? 1 : 0);
        in.weights.push_back(real ? raw[j] / total : 0.0);
        for (std::size_t k = 0; k < answer_slots; ++k)
            in.seqs.push_back(triplet_tokens(query, k < answers.size() ? answers[k] : Tokens{kNullToken},
                                             real ? intents[j] : Tokens{kNullToken}));
    }
    return in;
}

}  // namespace rlc_detail

// Tokenized, padded model input. `answer_slots` / `intent_slots` default to
// the configured K and n_max; smaller values (never below the real counts)
// exist to check that padding is inert.
inline PaneInput make_pane_input(const Tokens& query, const ClarificationPane& pane, const QueryIntents& intents,
                                 const EntityLexicon& lexicon, const RlcConfig& config,
                                 std::optional<std::size_t> answer_slots = std::nullopt,
                                 std::optional<std::size_t> intent_slots = std::nullopt) {
    const std::size_t K = answer_slots.value_or(static_cast<std::size_t>(config.K));
    const std::size_t n = intent_slots.value_or(static_cast<std::size_t>(config.n_max));
    if (pane.answers.size() > K)
        throw InputError("pane " + pane.id + " has " + std::to_string(pane.answers.size()) + " answers, more than K=" +
                         std::to_string(K));
    std::vector<Tokens> answers;
    for (const auto& a : pane.answers) answers.push_back(a.text);

    PaneInput in;
    in.ice[0] = rlc_detail::ice_input(query, answers, K, intents.reformulation, n);
    in.ice[1] = rlc_detail::ice_input(query, answers, K, intents.click_title, n);

    Tokens qseq{kBeginToken};
    qseq.insert(qseq.end(), pane.question_text.begin(), pane.question_text.end());
    qseq.push_back(kEndToken);
    in.ace.seqs.push_back(std::move(qseq));
    in.ace.mask.push_back(1);
    for (std::size_t k = 0; k < K; ++k) {
        Tokens s{kBeginToken};
        if (k < pane.answers.size()) {
            const auto& a = pane.answers[k];
            s.insert(s.end(), a.text.begin(), a.text.end());
            s.push_back(kSepToken);
            const auto type = rlc_detail::entity_type_of(a, lexicon);
            s.push_back(type.empty() ? kNoTypeToken : type);
        } else {
            s.push_back(kNullToken);
        }
        s.push_back(kEndToken);
        in.ace.seqs.push_back(std::move(s));
        in.ace.mask.push_back(k < pane.answers.size() ? 1 : 0);
    }
    return in;
}

// ─── model ───────────────────────────────────────────────────────────────────

struct IceParams {
    std::vector<EncoderLayerParams> over_answers;  // R(1) -> R(2)
    std::vector<EncoderLayerParams> over_intents;  // R(2) -> R(3)
    Linear ff1, ff2;
};

struct RlcForward {
    Tensor scores;                          // [B x 1]
    std::array<Tensor, 2> ice;              // R(ICE) per source, [B x dim]
    Tensor ace;                             // R(ACE), [B x dim]
};

class RlcModel {
public:
    explicit RlcModel(RlcConfig config) : config_(config) {
        validate_rlc_config(config_);
        Rng rng(derive_seed(config_.seed, "rlc-init"));
        text_ = TextEncoder::create(params_, "text", rng, config_.buckets, config_.embed_dim, config_.dim);
        for (int s = 0; s < 2; ++s) {
            const std::string p = s == 0 ? "ice_reformulation" : "ice_click_title";
            for (std::size_t l = 0; l < config_.layers; ++l)
                ice_[s].over_answers.push_back(EncoderLayerParams::create(
                    params_, p + ".answers" + std::to_string(l), rng, config_.dim, config_.heads, config_.ff_dim));
            for (std::size_t l = 0; l < config_.layers; ++l)
                ice_[s].over_intents.push_back(EncoderLayerParams::create(
                    params_, p + ".intents" + std::to_string(l), rng, config_.dim, config_.heads, config_.ff_dim));
            ice_[s].ff1 = Linear::create(params_, p + ".ff1", rng, config_.dim, config_.dim);
            ice_[s].ff2 = Linear::create(params_, p + ".ff2", rng, config_.dim, config_.dim);
        }
        for (std::size_t l = 0; l < config_.layers; ++l)
            ace_.push_back(EncoderLayerParams::create(params_, "ace" + std::to_string(l), rng, config_.dim,
                                                      config_.heads, config_.ff_dim));
        head1_ = Linear::create(params_, "head1", rng, 3 * config_.dim, config_.dim);
        head2_ = Linear::create(params_, "head2", rng, config_.dim, 1);
    }

    RlcModel(const RlcModel&) = delete;
    RlcModel& operator=(const RlcModel&) = delete;

    const RlcConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const TextEncoder& text_encoder() const { return text_; }
    const IceParams& ice(int source) const { return ice_[static_cast<std::size_t>(source)]; }
    const std::vector<EncoderLayerParams>& ace() const { return ace_; }
    const Linear& head1() const { return head1_; }
    const Linear& head2() const { return head2_; }

    // R(ICE) for a batch of panes, one row per pane. Padding slots are left
    // out of the batch: as masked keys with zero pooling weight they cannot
    // reach any visible output, so skipping them changes nothing but cost.
    Tensor encode_intent_coverage(const std::vector<const PaneInput*>& batch, int source) const {
        const auto& p = ice_[static_cast<std::size_t>(source)];
        std::vector<Tokens> seqs;
        std::vector<Segment> answer_segs, intent_segs;
        std::vector<double> answer_coef, intent_coef;
        for (const auto* in : batch) {
            const auto& ice = in->ice[static_cast<std::size_t>(source)];
            const std::size_t K = ice.answer_mask.size(), n = ice.intent_mask.size();
            std::size_t visible = 0;
            for (auto m : ice.answer_mask) visible += m;
            const std::size_t first_intent = answer_segs.size();
            for (std::size_t j = 0; j < n; ++j) {
                if (!ice.intent_mask[j]) continue;
                answer_segs.push_back({seqs.size(), visible});
                for (std::size_t k = 0; k < K; ++k) {
                    if (!ice.answer_mask[k]) continue;
                    seqs.push_back(ice.seqs[j * K + k]);
                    answer_coef.push_back(1.0 / static_cast<double>(visible));
                }
                intent_coef.push_back(ice.weights[j]);
            }
            intent_segs.push_back({first_intent, answer_segs.size() - first_intent});
        }
        const Tensor r1 = text_.encode(seqs);
        const Tensor r2 = segment_pool(transformer_encoder(r1, p.over_answers, answer_segs, all_visible(seqs.size())),
                                       answer_segs, answer_coef);
        const Tensor r3 = transformer_encoder(r2, p.over_intents, intent_segs, all_visible(r2.rows()));
        const Tensor pooled = segment_pool(r3, intent_segs, intent_coef);
        return p.ff2(relu(p.ff1(pooled)));
    }

    // R(ACE): encoder over question + answers, mean over the visible rows.
    // Null answers stay in the sequence, masked from attention and pooling.
    Tensor encode_answer_consistency(const std::vector<const PaneInput*>& batch) const {
        std::vector<Tokens> seqs;
        std::vector<Segment> segs;
        std::vector<std::uint8_t> mask;
        std::vector<double> coef;
        for (const auto* in : batch) {
            segs.push_back({seqs.size(), in->ace.seqs.size()});
            std::size_t visible = 0;
            for (auto m : in->ace.mask) visible += m;
            for (std::size_t r = 0; r < in->ace.seqs.size(); ++r) {
                seqs.push_back(in->ace.seqs[r]);
                mask.push_back(in->ace.mask[r]);
                coef.push_back(in->ace.mask[r] ? 1.0 / static_cast<double>(visible) : 0.0);
            }
        }
        return segment_pool(transformer_encoder(text_.encode(seqs), ace_, segs, mask), segs, coef);
    }

    RlcForward forward(const std::vector<const PaneInput*>& batch) const {
        RlcForward f;
        f.ice[0] = encode_intent_coverage(batch, 0);
        f.ice[1] = encode_intent_coverage(batch, 1);
        f.ace = encode_answer_consistency(batch);
        f.scores = head2_(relu(head1_(concat_cols({f.ice[0], f.ice[1], f.ace}))));
        return f;
    }

    Tensor scores(const std::vector<const PaneInput*>& batch) const { return forward(batch).scores; }

    double score(const PaneInput& in) const { return scores({&in}).values()[0]; }

    Json to_checkpoint() const { return params_to_json(params_, Json(config_)); }

    static std::unique_ptr<RlcModel> from_checkpoint(const Json& j) {
        auto model = std::make_unique<RlcModel>(j.at("config").get<RlcConfig>());
        params_from_json(model->params_, j);
        return model;
    }

private:
    RlcConfig config_;
    ParamSet params_;
    TextEncoder text_;
    std::array<IceParams, 2> ice_;
    std::vector<EncoderLayerParams> ace_;
    Linear head1_, head2_;
};

inline double score(const Tokens& query, const ClarificationPane& pane, const QueryIntents& intents,
                    const EntityLexicon& lexicon, const RlcModel& model) {
    return model.score(make_pane_input(query, pane, intents, lexicon, model.config()));
}

// ─── pairwise training ───────────────────────────────────────────────────────

struct TrainTriple {
    Tokens query;
    QueryIntents intents;
    std::vector<ClarificationPane> panes;
    std::vector<double> labels;
};

struct TrainConfig {
    AdamConfig adam;
    long steps = 1000;
    std::size_t batch_pairs = 8;
    std::uint64_t seed = 1;
};

inline void validate_train_config(const TrainConfig& c) {
    if (c.steps < 1) throw InputError("training steps must be >= 1");
    if (c.batch_pairs < 1) throw InputError("batch_pairs must be >= 1");
    AdamConfig a = c.adam;
    if (a.total_steps == 0) a.total_steps = c.steps;
    validate_adam_config(a);
}

struct LossPoint {
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<LossPoint> curve;
    std::size_t pairs = 0;
    long uniform_substitutions = 0;  // intent sets whose weights were all zero
};

// Pane inputs plus every (winner, loser) pair with distinct labels.
struct PairData {
    std::vector<PaneInput> inputs;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (winner, loser) into inputs
    long uniform_substitutions = 0;
};

inline PairData build_pairs(const std::vector<TrainTriple>& data, const EntityLexicon& lexicon, const RlcConfig& config) {
    PairData out;
    for (const auto& t : data) {
        if (t.panes.size() != t.labels.size()) throw InputError("train triple with mismatched panes and labels");
        const std::size_t base = out.inputs.size();
        for (std::size_t i = 0; i < t.panes.size(); ++i) {
            if (!std::isfinite(t.labels[i])) throw InputError("non-finite training label for pane " + t.panes[i].id);
            out.inputs.push_back(make_pane_input(t.query, t.panes[i], t.intents, lexicon, config));
            for (const auto& ice : out.inputs.back().ice) out.uniform_substitutions += ice.substituted_uniform;
        }
        for (std::size_t a = 0; a < t.panes.size(); ++a)
            for (std::size_t b = a + 1; b < t.panes.size(); ++b) {
                if (t.labels[a] == t.labels[b]) continue;
                out.pairs.push_back(t.labels[a] > t.labels[b] ? std::pair{base + a, base + b}
                                                              : std::pair{base + b, base + a});
            }
    }
    return out;
}

// p = softmax(score_a, score_b); loss = -log p_winner.
inline Tensor pair_loss(const Tensor& winner_score, const Tensor& loser_score) {
    return scale(element(log_softmax_rows(concat_cols({winner_score, loser_score})), 0, 0), -1.0);
}

// Mean pair loss over a batch of (winner, loser) pairs.
inline Tensor batch_pair_loss(const RlcModel& model, const PairData& data,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    std::vector<const PaneInput*> batch;
    for (const auto& [w, l] : pairs) {
        batch.push_back(&data.inputs[w]);
        batch.push_back(&data.inputs[l]);
    }
    const std::size_t n = pairs.size();
    // Row i is (score of winner i, score of loser i).
    const Tensor logp = log_softmax_rows(reshape(model.scores(batch), n, 2));
    return scale(sum(slice_cols(logp, 0, 1)), -1.0 / static_cast<double>(n));
}

inline TrainReport train_pairs(RlcModel& model, const PairData& data, const TrainConfig& config) {
    validate_train_config(config);
    if (data.pairs.empty()) throw InputError("no training pairs: every query needs panes with distinct labels");
    AdamConfig adam = config.adam;
    if (adam.total_steps == 0) adam.total_steps = config.steps;
    Adam opt(model.params(), adam);
    Rng rng(derive_seed(config.seed, "pairs"));
    auto order = data.pairs;
    rng.shuffle(order);
    std::size_t cursor = 0;

    TrainReport report;
    report.pairs = data.pairs.size();
    report.uniform_substitutions = data.uniform_substitutions;
    for (long step = 1; step <= config.steps; ++step) {
        std::vector<std::pair<std::size_t, std::size_t>> batch;
        while (batch.size() < std::min(config.batch_pairs, order.size())) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        model.params().zero_grad();
        const Tensor loss = batch_pair_loss(model, data, batch);
        backward(loss);
        opt.update();
        report.curve.push_back({step, loss.item(), scheduled_lr(adam, step)});
    }
    return report;
}

inline TrainReport train_pairwise(const std::vector<TrainTriple>& data, RlcModel& model, const EntityLexicon& lexicon,
                                  const TrainConfig& config) {
    return train_pairs(model, build_pairs(data, lexicon, model.config()), config);
}

// Fraction of distinct-label pairs the model orders correctly (ties count as wrong).
inline double pairwise_accuracy(const RlcModel& model, const PairData& data) {
    if (data.pairs.empty()) throw InputError("no pairs to evaluate");
    std::vector<const PaneInput*> all;
    for (const auto& in : data.inputs) all.push_back(&in);
    const auto s = model.scores(all).values();
    std::size_t right = 0;
    for (const auto& [w, l] : data.pairs) right += s[w] > s[l];
    return static_cast<double>(right) / static_cast<double>(data.pairs.size());
}

// ─── fine-tuning on human labels ─────────────────────────────────────────────

struct LabeledQuery {
    Tokens query;
    QueryIntents intents;
    std::vector<ClarificationPane> panes;
    std::vector<Grade> grades;
};

struct FineTuneConfig {
    TrainConfig train;
    double lr_scale = 0.1;    // multiplies train.adam.lr
    std::size_t list_size = 10;
};

// Pads each query's list to `list_size` with Bad-labeled panes drawn from
// other queries, then maps grades to Good=2, Fair=1, Bad=0.
inline std::vector<TrainTriple> pad_labeled(const std::vector<LabeledQuery>& data, std::size_t list_size,
                                            std::uint64_t seed) {
    std::vector<std::pair<std::size_t, std::size_t>> pool;  // (query, pane)
    for (std::size_t q = 0; q < data.size(); ++q)
        for (std::size_t p = 0; p < data[q].panes.size(); ++p) pool.push_back({q, p});
    Rng rng(derive_seed(seed, "fine-tune-padding"));
    std::vector<TrainTriple> out;
    for (std::size_t q = 0; q < data.size(); ++q) {
        const auto& lq = data[q];
        if (lq.panes.size() != lq.grades.size()) throw InputError("labeled query with mismatched panes and grades");
        TrainTriple t{lq.query, lq.intents, lq.panes, {}};
        for (auto g : lq.grades) t.labels.push_back(static_cast<double>(static_cast<int>(g)));
        std::vector<std::pair<std::size_t, std::size_t>> foreign;
        for (const auto& e : pool)
            if (e.first != q) foreign.push_back(e);
        while (t.panes.size() < list_size && !foreign.empty()) {
            const auto pick = static_cast<std::size_t>(rng.below(foreign.size()));
            t.panes.push_back(data[foreign[pick].first].panes[foreign[pick].second]);
            t.labels.push_back(0.0);
            foreign.erase(foreign.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        out.push_back(std::move(t));
    }
    return out;
}

inline TrainReport fine_tune(const std::vector<LabeledQuery>& data, RlcModel& model, const EntityLexicon& lexicon,
                             const FineTuneConfig& config) {
    std::set<int> distinct;
    for (const auto& q : data)
        for (auto g : q.grades) distinct.insert(static_cast<int>(g));
    if (distinct.size() < 2) throw InputError("fine-tuning needs at least two distinct labels");
    if (!(config.lr_scale > 0.0)) throw InputError("lr_scale must be > 0");
    TrainConfig tc = config.train;
    tc.adam.lr *= config.lr_scale;
    return train_pairwise(pad_labeled(data, config.list_size, config.train.seed), model, lexicon, tc);
}

inline void write_loss_log(std::ostream& os, const TrainReport& report) {
    os << "step\tloss\tlr\n";
    for (const auto& p : report.curve) os << p.step << '\t' << fmt_double(p.loss) << '\t' << fmt_double(p.lr) << '\n';
}

}  // namespace clarify
