#pragma once
// Encoder building blocks on top of tensor.hpp: named parameters, linear and
// transformer layers, the hashed-bag text encoder, Adam, and checkpoints.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "io.hpp"
#include "tensor.hpp"

namespace clarify {

// Ordered, named trainable tensors.
class ParamSet {
public:
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
        index_[name] = items_.size();
        items_.push_back({name, t});
        return t;
    }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (const auto& [n, t] : items_) out.push_back(t);
        return out;
    }
    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InputError("no parameter named '" + name + "'");
        return items_[it->second].second;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }
    void zero_grad() {
        for (auto& [n, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

inline Tensor xavier(Rng& rng, std::size_t in, std::size_t out) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> v(in * out);
    for (auto& x : v) x = rng.uniform(-a, a);
    return Tensor(in, out, std::move(v), true);
}

struct Linear {
    Tensor w, b;

    static Linear create(ParamSet& ps, const std::string& name, Rng& rng, std::size_t in, std::size_t out) {
        return {ps.add(name + ".w", xavier(rng, in, out)), ps.add(name + ".b", Tensor::zeros(1, out, true))};
    }
    Tensor operator()(const Tensor& x) const { return add_row(matmul(x, w), b); }
};

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams create(ParamSet& ps, const std::string& name, std::size_t dim) {
        return {ps.add(name + ".gain", Tensor(1, dim, std::vector<double>(dim, 1.0), true)),
                ps.add(name + ".bias", Tensor::zeros(1, dim, true))};
    }
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

// Head h owns columns [h*dim/heads, (h+1)*dim/heads) of wq, wk and wv, and the
// matching rows of wo.
struct EncoderLayerParams {
    std::size_t heads = 1;
    Linear q, k, v, o;
    Linear ff1, ff2;
    LayerNormParams ln1, ln2;

    static EncoderLayerParams create(ParamSet& ps, const std::string& name, Rng& rng, std::size_t dim,
                                     std::size_t heads, std::size_t ff_dim) {
        if (heads == 0 || dim % heads != 0)
            throw InputError("head count " + std::to_string(heads) + " does not divide model dim " + std::to_string(dim));
        EncoderLayerParams p;
        p.heads = heads;
        p.q = Linear::create(ps, name + ".q", rng, dim, dim);
        p.k = Linear::create(ps, name + ".k", rng, dim, dim);
        p.v = Linear::create(ps, name + ".v", rng, dim, dim);
        p.o = Linear::create(ps, name + ".o", rng, dim, dim);
        p.ff1 = Linear::create(ps, name + ".ff1", rng, dim, ff_dim);
        p.ff2 = Linear::create(ps, name + ".ff2", rng, ff_dim, dim);
        p.ln1 = LayerNormParams::create(ps, name + ".ln1", dim);
        p.ln2 = LayerNormParams::create(ps, name + ".ln2", dim);
        return p;
    }
};

inline std::vector<std::uint8_t> all_visible(std::size_t rows) { return std::vector<std::uint8_t>(rows, 1); }

inline Tensor multi_head_self_attention(const Tensor& x, const EncoderLayerParams& p, const std::vector<Segment>& segs,
                                        const std::vector<std::uint8_t>& mask) {
    if (x.cols() % p.heads != 0)
        throw ShapeError("attention: " + std::to_string(p.heads) + " heads do not divide width " + std::to_string(x.cols()));
    return p.o(attention(p.q(x), p.k(x), p.v(x), segs, mask, p.heads));
}

inline Tensor multi_head_self_attention(const Tensor& x, const EncoderLayerParams& p) {
    return multi_head_self_attention(x, p, {{0, x.rows()}}, all_visible(x.rows()));
}

// Post-norm encoder layer: LN(x + MHA(x)), then LN(h + FF(h)).
inline Tensor transformer_encoder_layer(const Tensor& x, const EncoderLayerParams& p, const std::vector<Segment>& segs,
                                        const std::vector<std::uint8_t>& mask) {
    const Tensor h = p.ln1(add(x, multi_head_self_attention(x, p, segs, mask)));
    return p.ln2(add(h, p.ff2(relu(p.ff1(h)))));
}

inline Tensor transformer_encoder_layer(const Tensor& x, const EncoderLayerParams& p) {
    return transformer_encoder_layer(x, p, {{0, x.rows()}}, all_visible(x.rows()));
}

inline Tensor transformer_encoder(Tensor x, const std::vector<EncoderLayerParams>& layers,
                                  const std::vector<Segment>& segs, const std::vector<std::uint8_t>& mask) {
    for (const auto& l : layers) x = transformer_encoder_layer(x, l, segs, mask);
    return x;
}

// ─── text encoder ────────────────────────────────────────────────────────────

inline const std::string kBeginToken = "<b>";
inline const std::string kSepToken = "<s>";
inline const std::string kEndToken = "<e>";

// Unigram and adjacent-bigram buckets of a token sequence.
inline std::vector<std::uint32_t> hash_bag(const Tokens& tokens, std::size_t buckets) {
    std::vector<std::uint32_t> ids;
    ids.reserve(tokens.size() * 2);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        ids.push_back(static_cast<std::uint32_t>(fnv1a(tokens[i], fnv1a("u\x1f")) % buckets));
        if (i + 1 < tokens.size())
            ids.push_back(
                static_cast<std::uint32_t>(fnv1a(tokens[i + 1], fnv1a("\x1f", fnv1a(tokens[i], fnv1a("b\x1f")))) % buckets));
    }
    return ids;
}

// Hashed token + bigram embeddings, mean-pooled and projected to the model dim.
struct TextEncoder {
    std::size_t buckets = 0;
    Tensor table;
    Linear proj;

    static TextEncoder create(ParamSet& ps, const std::string& name, Rng& rng, std::size_t buckets,
                              std::size_t embed_dim, std::size_t dim) {
        TextEncoder t;
        t.buckets = buckets;
        std::vector<double> v(buckets * embed_dim);
        for (auto& x : v) x = rng.normal() * 0.1;
        t.table = ps.add(name + ".table", Tensor(buckets, embed_dim, std::move(v), true));
        t.proj = Linear::create(ps, name + ".proj", rng, embed_dim, dim);
        return t;
    }

    Tensor encode(const std::vector<Tokens>& seqs) const {
        std::vector<std::vector<std::uint32_t>> bags;
        bags.reserve(seqs.size());
        for (const auto& s : seqs) {
            if (s.empty()) throw InputError("text_encode: empty token sequence");
            bags.push_back(hash_bag(s, buckets));
        }
        return proj(embedding_bag(table, bags));
    }
};

inline Tensor text_encode(const Tokens& seq, const TextEncoder& enc) { return enc.encode({seq}); }

// ─── optimizer ───────────────────────────────────────────────────────────────

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    long warmup = 5000;
    long total_steps = 0;  // required: end of the linear decay
};

inline void validate_adam_config(const AdamConfig& c) {
    if (!(c.lr > 0.0)) throw InputError("learning rate must be > 0");
    if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0) throw InputError("Adam betas must be in [0, 1)");
    if (!(c.eps > 0.0)) throw InputError("Adam eps must be > 0");
    if (c.weight_decay < 0.0) throw InputError("weight decay must be >= 0");
    if (c.warmup < 0) throw InputError("warmup must be >= 0");
    if (c.total_steps < 1) throw InputError("total_steps must be >= 1");
}

// Linear warm-up to lr over `warmup` steps, then linear decay to 0 at total_steps.
inline double scheduled_lr(const AdamConfig& c, long step) {
    if (step < 1) throw InputError("optimizer step must be >= 1");
    double f = 1.0;
    if (c.warmup > 0 && step < c.warmup) f = static_cast<double>(step) / static_cast<double>(c.warmup);
    else if (c.total_steps > c.warmup)
        f = 1.0 - static_cast<double>(step - c.warmup) / static_cast<double>(c.total_steps - c.warmup);
    return c.lr * std::max(f, 0.0);
}

// Adam with decoupled weight decay.
class Adam {
public:
    Adam(const ParamSet& params, AdamConfig config) : params_(params.items()), config_(config) {
        validate_adam_config(config_);
        for (const auto& [n, t] : params_) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    long steps() const { return step_; }
    const AdamConfig& config() const { return config_; }

    // Applies one update from the accumulated gradients. Non-finite gradients
    // reject the whole step and leave every parameter untouched.
    void update() {
        for (const auto& [name, t] : params_)
            for (double g : t.node()->grad)
                if (!std::isfinite(g))
                    throw NumericalError("non-finite gradient in '" + name + "' at step " + std::to_string(step_ + 1));
        ++step_;
        const double lr = scheduled_lr(config_, step_);
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor t = params_[k].second;
            auto& w = t.mutable_values();
            const auto& g = t.node()->grad;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g.empty() ? 0.0 : g[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
                const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
                w[i] -= lr * (step + config_.weight_decay * w[i]);
            }
        }
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_, v_;
    long step_ = 0;
};

// ─── checkpoints ─────────────────────────────────────────────────────────────
//
// {"format": "clarify-params", "version": 1, "config": {...},
//  "tensors": [{"name": ..., "shape": [rows, cols], "values": [...]}, ...]}

inline constexpr int kCheckpointVersion = 1;

inline Json params_to_json(const ParamSet& ps, const Json& config) {
    Json tensors = Json::array();
    for (const auto& [name, t] : ps.items())
        tensors.push_back(Json{{"name", name}, {"shape", t.shape()}, {"values", t.values()}});
    return Json{{"format", "clarify-params"}, {"version", kCheckpointVersion}, {"config", config}, {"tensors", tensors}};
}

// Overwrites every parameter of `ps` from the checkpoint; names and shapes must match.
inline void params_from_json(ParamSet& ps, const Json& j) {
    if (j.value("format", "") != "clarify-params") throw InputError("not a clarify parameter checkpoint");
    if (j.value("version", 0) != kCheckpointVersion)
        throw InputError("unsupported checkpoint version " + j.value("version", Json(0)).dump());
    std::map<std::string, const Json*> by_name;
    for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    if (by_name.size() != ps.items().size())
        throw InputError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model has " +
                         std::to_string(ps.items().size()));
    for (const auto& [name, t] : ps.items()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw InputError("checkpoint lacks tensor '" + name + "'");
        const auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
        if (shape != t.shape()) throw InputError("tensor '" + name + "' has the wrong shape in the checkpoint");
        auto values = it->second->at("values").get<std::vector<double>>();
        if (values.size() != t.size()) throw InputError("tensor '" + name + "' has the wrong value count");
        Tensor(t).mutable_values() = std::move(values);
    }
}

}  // namespace clarify
