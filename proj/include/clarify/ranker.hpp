#pragma once
// Pane re-ranking: hand-built features, a LambdaMART ensemble of depth-limited
// regression trees, a ridge-regression baseline, and nDCG / engagement metrics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "analytics.hpp"
#include "core.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace clarify {

// ─── features ────────────────────────────────────────────────────────────────

struct FeatureVector {
    std::array<double, 8> template_onehot{};  // T1..T7, other
    double query_length = 0;
    double is_question = 0, is_faceted = 0, is_ambiguous = 0;
    std::array<double, 3> traffic_onehot{};  // head, torso, tail; all zero when unknown
    double answer_count = 0;
    double unique_clicked_urls = 0;
    double url_click_entropy_norm = 0;
    std::optional<double> rlc_score;

    std::vector<double> values(bool with_rlc) const {
        std::vector<double> v(template_onehot.begin(), template_onehot.end());
        v.insert(v.end(), {query_length, is_question, is_faceted, is_ambiguous});
        v.insert(v.end(), traffic_onehot.begin(), traffic_onehot.end());
        v.insert(v.end(), {answer_count, unique_clicked_urls, url_click_entropy_norm});
        if (with_rlc) {
            if (!rlc_score) throw InputError("feature vector has no RLC score");
            v.push_back(*rlc_score);
        }
        return v;
    }
};

inline std::vector<std::string> feature_names(bool with_rlc) {
    std::vector<std::string> n{"tpl_T1", "tpl_T2", "tpl_T3", "tpl_T4", "tpl_T5", "tpl_T6", "tpl_T7", "tpl_other",
                               "query_length", "is_question", "is_faceted", "is_ambiguous", "traffic_head",
                               "traffic_torso", "traffic_tail", "answer_count", "unique_clicked_urls",
                               "url_click_entropy_norm"};
    if (with_rlc) n.push_back("rlc_score");
    return n;
}

inline FeatureVector extract_features(const Query& query, const ClarificationPane& pane, const UrlClicks& history,
                                      std::optional<double> rlc_score = std::nullopt) {
    FeatureVector f;
    f.template_onehot[static_cast<std::size_t>(pane.template_id)] = 1.0;
    f.query_length = static_cast<double>(query.text.size());
    f.is_question = query.is_question ? 1.0 : 0.0;
    f.is_faceted = query.ambiguity_class == AmbiguityClass::faceted ? 1.0 : 0.0;
    f.is_ambiguous = query.ambiguity_class == AmbiguityClass::ambiguous ? 1.0 : 0.0;
    if (query.traffic_class != TrafficClass::unknown) f.traffic_onehot[static_cast<std::size_t>(query.traffic_class)] = 1.0;
    f.answer_count = static_cast<double>(pane.answers.size());
    f.unique_clicked_urls = static_cast<double>(unique_clicked_urls(history));
    f.url_click_entropy_norm = url_click_entropy_norm(history);
    f.rlc_score = rlc_score;
    return f;
}

// ─── metrics ─────────────────────────────────────────────────────────────────

inline double dcg_gain(double label) { return std::exp2(label) - 1.0; }

// Labels listed in ranked order. Gain 2^l - 1, discount log2(rank + 1);
// a list whose ideal DCG is 0 scores 0.
inline double ndcg_at_k(std::span<const double> ranked_labels, int k) {
    if (k < 1) throw InputError("nDCG cutoff must be >= 1");
    if (ranked_labels.empty()) throw InputError("nDCG of an empty list");
    auto dcg = [k](std::span<const double> ls) {
        double s = 0.0;
        const std::size_t n = std::min(ls.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < n; ++r) s += dcg_gain(ls[r]) / std::log2(static_cast<double>(r) + 2.0);
        return s;
    };
    std::vector<double> ideal(ranked_labels.begin(), ranked_labels.end());
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const double idcg = dcg(ideal);
    return idcg > 0.0 ? dcg(ranked_labels) / idcg : 0.0;
}

// Indices by descending score; ties keep input order.
inline std::vector<std::size_t> order_by_score(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

// ─── ranking data ────────────────────────────────────────────────────────────

// Rows grouped by query: rows [offsets[q], offsets[q+1]) belong to query q.
struct RankingData {
    std::vector<std::vector<double>> x;
    std::vector<double> labels;
    std::vector<std::size_t> offsets{0};

    std::size_t queries() const { return offsets.size() - 1; }
    std::size_t features() const { return x.empty() ? 0 : x[0].size(); }

    void add_query(const std::vector<std::vector<double>>& rows, const std::vector<double>& ls) {
        if (rows.size() != ls.size()) throw InputError("query rows and labels differ in length");
        for (const auto& r : rows) {
            if (!x.empty() && r.size() != x[0].size()) throw InputError("inconsistent feature width");
            x.push_back(r);
        }
        labels.insert(labels.end(), ls.begin(), ls.end());
        offsets.push_back(x.size());
    }
};

// ─── regression trees ────────────────────────────────────────────────────────

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(std::span<const double> x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

struct BoostedEnsemble {
    std::size_t feature_count = 0;
    double shrinkage = 0.1;
    int max_depth = 4;
    std::vector<RegressionTree> trees;  // leaf values already include shrinkage

    double predict(std::span<const double> x) const {
        if (x.size() != feature_count)
            throw InputError("ensemble expects " + std::to_string(feature_count) + " features, got " +
                             std::to_string(x.size()));
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(x);
        return s;
    }
};

struct LambdaMartConfig {
    int trees = 100;
    int max_depth = 4;
    double shrinkage = 0.1;
    std::size_t min_leaf = 1;
    double sigma = 1.0;
    int threads = 1;  // split search only; results do not depend on it
};

inline void validate_lambdamart_config(const LambdaMartConfig& c) {
    if (c.trees < 0) throw InputError("tree count must be >= 0");
    if (c.max_depth < 1 || c.max_depth > 4) throw InputError("tree depth must be in [1, 4]");
    if (!(c.shrinkage > 0.0)) throw InputError("shrinkage must be > 0");
    if (c.min_leaf < 1) throw InputError("min_leaf must be >= 1");
    if (!(c.sigma > 0.0)) throw InputError("sigma must be > 0");
}

namespace ranker_detail {

struct Split {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

// Best variance-reduction split of rows on the target; ties go to the lower
// feature index, then the lower threshold.
inline Split best_split(const RankingData& d, const std::vector<std::size_t>& rows, const std::vector<double>& target,
                        std::size_t min_leaf, int threads) {
    const std::size_t nf = d.features();
    std::vector<Split> per_feature(nf);
    double total = 0.0;
    for (auto r : rows) total += target[r];
    const double n = static_cast<double>(rows.size());
    const double base = total * total / n;
    parallel_for(nf, threads, [&](std::size_t f) {
        std::vector<std::size_t> sorted(rows);
        std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return d.x[a][f] < d.x[b][f]; });
        double left = 0.0;
        Split best;
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
            left += target[sorted[i]];
            const double lo = d.x[sorted[i]][f], hi = d.x[sorted[i + 1]][f];
            if (!(lo < hi)) continue;
            const std::size_t nl = i + 1, nr = sorted.size() - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double right = total - left;
            const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) - base;
            if (gain > best.gain) best = {gain, static_cast<int>(f), lo + (hi - lo) / 2.0};
        }
        per_feature[f] = best;
    });
    Split best;
    for (const auto& s : per_feature)
        if (s.feature >= 0 && s.gain > best.gain * (1.0 + 1e-12) + 1e-12) best = s;
    return best;
}

inline int grow(RegressionTree& tree, const RankingData& d, const std::vector<std::size_t>& rows,
                const std::vector<double>& grad, const std::vector<double>& hess, int depth, const LambdaMartConfig& c) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    Split s;
    if (depth < c.max_depth && rows.size() >= 2 * c.min_leaf) s = best_split(d, rows, grad, c.min_leaf, c.threads);
    if (s.feature < 0) {
        double g = 0.0, h = 0.0;
        for (auto r : rows) g += grad[r], h += hess[r];
        tree.nodes[static_cast<std::size_t>(id)].value = h > 1e-12 ? g / h : 0.0;
        return id;
    }
    std::vector<std::size_t> left, right;
    for (auto r : rows) (d.x[r][static_cast<std::size_t>(s.feature)] <= s.threshold ? left : right).push_back(r);
    const int l = grow(tree, d, left, grad, hess, depth + 1, c);
    const int r = grow(tree, d, right, grad, hess, depth + 1, c);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = l;
    node.right = r;
    return id;
}

// Rank (0-based) of each row within its query under the current scores.
inline std::vector<std::size_t> ranks_within(const RankingData& d, const std::vector<double>& scores) {
    std::vector<std::size_t> rank(scores.size());
    for (std::size_t q = 0; q < d.queries(); ++q) {
        const std::size_t b = d.offsets[q], e = d.offsets[q + 1];
        const auto ord = order_by_score(std::span<const double>(scores).subspan(b, e - b));
        for (std::size_t r = 0; r < ord.size(); ++r) rank[b + ord[r]] = r;
    }
    return rank;
}

inline double ideal_dcg(const RankingData& d, std::size_t q) {
    std::vector<double> ls(d.labels.begin() + static_cast<std::ptrdiff_t>(d.offsets[q]),
                           d.labels.begin() + static_cast<std::ptrdiff_t>(d.offsets[q + 1]));
    std::sort(ls.begin(), ls.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t r = 0; r < ls.size(); ++r) s += dcg_gain(ls[r]) / std::log2(static_cast<double>(r) + 2.0);
    return s;
}

}  // namespace ranker_detail

// |delta nDCG| of swapping each ordered pair (i above j by label) at the
// ranking induced by `scores`.
struct PairWeight {
    std::size_t i = 0, j = 0;
    double delta = 0.0;
};

inline std::vector<PairWeight> pair_weights(const RankingData& d, const std::vector<double>& scores) {
    const auto rank = ranker_detail::ranks_within(d, scores);
    std::vector<PairWeight> out;
    for (std::size_t q = 0; q < d.queries(); ++q) {
        const double idcg = ranker_detail::ideal_dcg(d, q);
        if (idcg <= 0.0) continue;
        for (std::size_t i = d.offsets[q]; i < d.offsets[q + 1]; ++i)
            for (std::size_t j = d.offsets[q]; j < d.offsets[q + 1]; ++j) {
                if (!(d.labels[i] > d.labels[j])) continue;
                const double delta = std::abs((dcg_gain(d.labels[i]) - dcg_gain(d.labels[j])) *
                                              (1.0 / std::log2(static_cast<double>(rank[i]) + 2.0) -
                                               1.0 / std::log2(static_cast<double>(rank[j]) + 2.0))) /
                                     idcg;
                out.push_back({i, j, delta});
            }
    }
    return out;
}

// Lambda loss: pairwise logistic loss weighted by fixed |delta nDCG| weights.
// Each boosting round minimizes it with the weights taken at the ranking
// before the round; the lambdas are its negative gradient.
inline double lambda_loss(const std::vector<PairWeight>& weights, const std::vector<double>& scores,
                          double sigma = 1.0) {
    double loss = 0.0;
    for (const auto& w : weights) {
        const double z = sigma * (scores[w.i] - scores[w.j]);
        loss += w.delta * (z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)));
    }
    return loss;
}

struct LambdaMartReport {
    // Per kept tree: lambda loss before and after it, under that round's weights.
    std::vector<std::pair<double, double>> rounds;
    int rejected = 0;  // trees that could not lower the loss even at 1/1024 of the step
};

inline BoostedEnsemble train_lambdamart(const RankingData& d, const LambdaMartConfig& config,
                                        LambdaMartReport* report = nullptr) {
    validate_lambdamart_config(config);
    bool usable = false, varied = false;
    for (std::size_t q = 0; q < d.queries(); ++q) {
        const std::size_t b = d.offsets[q], e = d.offsets[q + 1];
        for (std::size_t i = b; i < e; ++i) {
            if (!std::isfinite(d.labels[i])) throw InputError("non-finite ranking label");
            if (d.labels[i] != d.labels[b]) usable = true;
            if (d.labels[i] != d.labels[0]) varied = true;
        }
    }
    if (!varied) throw InputError("degenerate labels: every pane has the same label");
    if (!usable) throw InputError("no query has two panes with distinct labels");

    BoostedEnsemble ens;
    ens.feature_count = d.features();
    ens.shrinkage = config.shrinkage;
    ens.max_depth = config.max_depth;
    const std::size_t n = d.x.size();
    std::vector<double> scores(n, 0.0);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);

    for (int t = 0; t < config.trees; ++t) {
        const auto weights = pair_weights(d, scores);
        std::vector<double> grad(n, 0.0), hess(n, 0.0);
        for (const auto& w : weights) {
            const double rho = 1.0 / (1.0 + std::exp(config.sigma * (scores[w.i] - scores[w.j])));
            const double lam = config.sigma * rho * w.delta;
            const double h = config.sigma * config.sigma * rho * (1.0 - rho) * w.delta;
            grad[w.i] += lam;
            grad[w.j] -= lam;
            hess[w.i] += h;
            hess[w.j] += h;
        }
        RegressionTree tree;
        ranker_detail::grow(tree, d, all, grad, hess, 0, config);

        // Shrunken Newton step, halved until the loss does not rise.
        const double before = lambda_loss(weights, scores, config.sigma);
        double step = config.shrinkage, after = before;
        bool kept = false;
        std::vector<double> trial(n);
        for (int halving = 0; halving <= 10; ++halving, step /= 2.0) {
            for (std::size_t i = 0; i < n; ++i) trial[i] = scores[i] + step * tree.predict(d.x[i]);
            after = lambda_loss(weights, trial, config.sigma);
            if (after <= before) {
                kept = true;
                break;
            }
        }
        if (!kept) {
            if (report) ++report->rejected;
            continue;
        }
        for (auto& node : tree.nodes) node.value *= step;
        scores = trial;
        ens.trees.push_back(std::move(tree));
        if (report) report->rounds.push_back({before, after});
    }
    return ens;
}

// ─── ensemble text format ────────────────────────────────────────────────────
//
//   lambdamart 1
//   features <n>
//   shrinkage <s>
//   max_depth <d>
//   trees <t>
//   tree <i> <node count>
//   split <feature> <threshold> <left> <right>   |   leaf <value>
//   ...

inline void write_ensemble(std::ostream& os, const BoostedEnsemble& e) {
    os << "lambdamart 1\nfeatures " << e.feature_count << "\nshrinkage " << fmt_double(e.shrinkage) << "\nmax_depth "
       << e.max_depth << "\ntrees " << e.trees.size() << '\n';
    for (std::size_t t = 0; t < e.trees.size(); ++t) {
        os << "tree " << t << ' ' << e.trees[t].nodes.size() << '\n';
        for (const auto& n : e.trees[t].nodes) {
            if (n.feature < 0) os << "leaf " << fmt_double(n.value) << '\n';
            else os << "split " << n.feature << ' ' << fmt_double(n.threshold) << ' ' << n.left << ' ' << n.right << '\n';
        }
    }
}

inline BoostedEnsemble read_ensemble(std::istream& is) {
    std::size_t line_no = 0;
    auto next = [&](const std::string& expect) {
        std::string line;
        if (!std::getline(is, line)) throw InputError("ensemble: unexpected end of file after line " + std::to_string(line_no));
        ++line_no;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key != expect && !(expect == "node" && (key == "leaf" || key == "split")))
            throw InputError("ensemble line " + std::to_string(line_no) + ": expected '" + expect + "', got '" + key + "'");
        std::string rest;
        std::getline(ss, rest);
        return std::pair{key, rest};
    };
    auto fail = [&](const std::string& msg) { return InputError("ensemble line " + std::to_string(line_no) + ": " + msg); };
    BoostedEnsemble e;
    int version = 0;
    std::size_t count = 0;
    if (!(std::istringstream(next("lambdamart").second) >> version) || version != 1) throw fail("unsupported version");
    if (!(std::istringstream(next("features").second) >> e.feature_count)) throw fail("bad feature count");
    if (!(std::istringstream(next("shrinkage").second) >> e.shrinkage)) throw fail("bad shrinkage");
    if (!(std::istringstream(next("max_depth").second) >> e.max_depth)) throw fail("bad depth");
    if (!(std::istringstream(next("trees").second) >> count)) throw fail("bad tree count");
    for (std::size_t t = 0; t < count; ++t) {
        std::size_t idx = 0, nodes = 0;
        if (!(std::istringstream(next("tree").second) >> idx >> nodes) || idx != t || nodes == 0) throw fail("bad tree header");
        RegressionTree tree;
        for (std::size_t k = 0; k < nodes; ++k) {
            auto [key, rest] = next("node");
            std::istringstream ss(rest);
            TreeNode n;
            if (key == "leaf") {
                if (!(ss >> n.value) || !std::isfinite(n.value)) throw fail("bad leaf value");
            } else {
                if (!(ss >> n.feature >> n.threshold >> n.left >> n.right)) throw fail("bad split");
                if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= e.feature_count)
                    throw fail("split on unknown feature " + std::to_string(n.feature));
                if (n.left <= static_cast<int>(k) || n.right <= static_cast<int>(k) ||
                    n.left >= static_cast<int>(nodes) || n.right >= static_cast<int>(nodes))
                    throw fail("bad child index");
            }
            tree.nodes.push_back(n);
        }
        e.trees.push_back(std::move(tree));
    }
    return e;
}

// ─── linear baseline ─────────────────────────────────────────────────────────

// Ridge regression of the label on standardized features.
struct LinearRanker {
    std::vector<double> weights;  // original feature units
    double intercept = 0.0;

    double predict(std::span<const double> x) const {
        if (x.size() != weights.size()) throw InputError("linear ranker feature width mismatch");
        double s = intercept;
        for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
        return s;
    }
};

inline LinearRanker train_linear(const RankingData& d, double ridge = 1e-3) {
    const std::size_t n = d.x.size(), p = d.features();
    if (n == 0) throw InputError("no training rows");
    std::vector<double> mu(p, 0.0), sd(p, 0.0);
    for (const auto& r : d.x)
        for (std::size_t j = 0; j < p; ++j) mu[j] += r[j] / static_cast<double>(n);
    for (const auto& r : d.x)
        for (std::size_t j = 0; j < p; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]) / static_cast<double>(n);
    for (auto& s : sd) s = std::sqrt(s);
    double ymu = 0.0;
    for (double y : d.labels) ymu += y / static_cast<double>(n);
    // Normal equations (Z'Z + ridge*n*I) w = Z'y over the non-constant columns.
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < p; ++j)
        if (sd[j] > 1e-12) cols.push_back(j);
    const std::size_t m = cols.size();
    std::vector<double> a(m * m, 0.0), b(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(m);
        for (std::size_t c = 0; c < m; ++c) z[c] = (d.x[i][cols[c]] - mu[cols[c]]) / sd[cols[c]];
        for (std::size_t r = 0; r < m; ++r) {
            b[r] += z[r] * (d.labels[i] - ymu);
            for (std::size_t c = 0; c < m; ++c) a[r * m + c] += z[r] * z[c];
        }
    }
    for (std::size_t r = 0; r < m; ++r) a[r * m + r] += ridge * static_cast<double>(n);
    // Cholesky solve; the ridge keeps the system positive definite.
    for (std::size_t j = 0; j < m; ++j) {
        double s = a[j * m + j];
        for (std::size_t k = 0; k < j; ++k) s -= a[j * m + k] * a[j * m + k];
        if (!(s > 0.0)) throw NumericalError("linear ranker normal equations are not positive definite");
        a[j * m + j] = std::sqrt(s);
        for (std::size_t i = j + 1; i < m; ++i) {
            double t = a[i * m + j];
            for (std::size_t k = 0; k < j; ++k) t -= a[i * m + k] * a[j * m + k];
            a[i * m + j] = t / a[j * m + j];
        }
    }
    std::vector<double> w(b);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < i; ++k) w[i] -= a[i * m + k] * w[k];
        w[i] /= a[i * m + i];
    }
    for (std::size_t i = m; i-- > 0;) {
        for (std::size_t k = i + 1; k < m; ++k) w[i] -= a[k * m + i] * w[k];
        w[i] /= a[i * m + i];
    }
    LinearRanker lr;
    lr.weights.assign(p, 0.0);
    lr.intercept = ymu;
    for (std::size_t c = 0; c < m; ++c) {
        lr.weights[cols[c]] = w[c] / sd[cols[c]];
        lr.intercept -= lr.weights[cols[c]] * mu[cols[c]];
    }
    return lr;
}

// Text format:
//   linear 1
//   features <n>
//   intercept <v>
//   weight <i> <v>      (n lines, i = 0..n-1)
inline void write_linear(std::ostream& os, const LinearRanker& l) {
    os << "linear 1\nfeatures " << l.weights.size() << "\nintercept " << fmt_double(l.intercept) << '\n';
    for (std::size_t i = 0; i < l.weights.size(); ++i) os << "weight " << i << ' ' << fmt_double(l.weights[i]) << '\n';
}

inline LinearRanker read_linear(std::istream& is) {
    std::size_t line_no = 0;
    auto next = [&](const std::string& expect) {
        std::string line;
        if (!std::getline(is, line)) throw InputError("linear: unexpected end of file after line " + std::to_string(line_no));
        ++line_no;
        std::istringstream ss(line);
        std::string key, rest;
        ss >> key;
        if (key != expect)
            throw InputError("linear line " + std::to_string(line_no) + ": expected '" + expect + "', got '" + key + "'");
        std::getline(ss, rest);
        return rest;
    };
    auto fail = [&](const std::string& msg) { return InputError("linear line " + std::to_string(line_no) + ": " + msg); };
    int version = 0;
    std::size_t n = 0;
    LinearRanker l;
    if (!(std::istringstream(next("linear")) >> version) || version != 1) throw fail("unsupported version");
    if (!(std::istringstream(next("features")) >> n) || n == 0) throw fail("bad feature count");
    if (!(std::istringstream(next("intercept")) >> l.intercept) || !std::isfinite(l.intercept)) throw fail("bad intercept");
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t idx = 0;
        double w = 0;
        if (!(std::istringstream(next("weight")) >> idx >> w) || idx != i || !std::isfinite(w)) throw fail("bad weight");
        l.weights.push_back(w);
    }
    return l;
}

// ─── ranking and evaluation ──────────────────────────────────────────────────

using PaneScorer = std::function<double(const FeatureVector&)>;

inline PaneScorer ensemble_scorer(const BoostedEnsemble& e, bool with_rlc) {
    return [e, with_rlc](const FeatureVector& f) { return e.predict(f.values(with_rlc)); };
}

inline PaneScorer linear_scorer(const LinearRanker& l, bool with_rlc) {
    return [l, with_rlc](const FeatureVector& f) { return l.predict(f.values(with_rlc)); };
}

// The stand-in for the prior-work baseline: rank by historical URL click entropy.
inline PaneScorer entropy_baseline() {
    return [](const FeatureVector& f) { return f.url_click_entropy_norm; };
}

struct RankedPane {
    std::string pane_id;
    double score = 0.0;
};

// Descending score; equal scores fall back to ascending pane id.
inline std::vector<RankedPane> rank_panes(const std::vector<ClarificationPane>& panes,
                                          const std::vector<FeatureVector>& features, const PaneScorer& scorer) {
    if (panes.empty()) throw InputError("rank_panes needs at least one pane");
    if (panes.size() != features.size()) throw InputError("rank_panes: panes and features differ in length");
    std::vector<RankedPane> out;
    for (std::size_t i = 0; i < panes.size(); ++i) out.push_back({panes[i].id, scorer(features[i])});
    std::sort(out.begin(), out.end(), [](const RankedPane& a, const RankedPane& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.pane_id < b.pane_id;
    });
    return out;
}

// One query's candidates for evaluation.
struct EvalQuery {
    std::vector<std::string> pane_ids;
    std::vector<FeatureVector> features;
    std::vector<double> labels;
    std::vector<double> engagement;  // observed rates; may be empty
};

struct EvalResult {
    std::string method;
    std::array<double, 3> ndcg{};  // @1, @3, @5
    std::vector<double> per_query_ndcg1;
    double top_engagement = 0.0;   // mean observed rate of the top-ranked pane
    std::optional<double> engagement_improvement_pct;
};

inline std::vector<std::size_t> rank_query(const EvalQuery& q, const PaneScorer& scorer) {
    std::vector<double> s;
    for (const auto& f : q.features) s.push_back(scorer(f));
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (s[a] != s[b]) return s[a] > s[b];
        return q.pane_ids[a] < q.pane_ids[b];
    });
    return idx;
}

inline EvalResult evaluate_ranker(const std::string& method, const std::vector<EvalQuery>& queries,
                                  const PaneScorer& scorer, int threads = 1) {
    if (queries.empty()) throw InputError("no evaluation queries");
    EvalResult r;
    r.method = method;
    std::vector<std::array<double, 4>> per(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t qi) {
        const auto& q = queries[qi];
        const auto ord = rank_query(q, scorer);
        std::vector<double> ranked;
        for (auto i : ord) ranked.push_back(q.labels[i]);
        per[qi] = {ndcg_at_k(ranked, 1), ndcg_at_k(ranked, 3), ndcg_at_k(ranked, 5),
                   q.engagement.empty() ? std::nan("") : q.engagement[ord[0]]};
    });
    bool have_rates = true;
    for (const auto& q : queries) have_rates = have_rates && q.engagement.size() == q.labels.size();
    for (const auto& p : per) {
        for (int k = 0; k < 3; ++k) r.ndcg[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)];
        r.per_query_ndcg1.push_back(p[0]);
        if (have_rates) r.top_engagement += p[3];
    }
    for (auto& v : r.ndcg) v /= static_cast<double>(queries.size());
    r.top_engagement = have_rates ? r.top_engagement / static_cast<double>(queries.size()) : std::nan("");
    return r;
}

// (method - baseline) / baseline in percent, on mean top-pane engagement.
inline double engagement_improvement(const EvalResult& method, const EvalResult& baseline) {
    if (std::isnan(method.top_engagement) || std::isnan(baseline.top_engagement))
        throw InputError("engagement improvement needs observed rates for every pane");
    if (baseline.top_engagement == 0.0) throw InputError("baseline mean engagement is 0");
    return 100.0 * (method.top_engagement - baseline.top_engagement) / baseline.top_engagement;
}

// Two-sided paired randomization (sign-flip) test on per-query differences.
inline double paired_randomization_p(std::span<const double> a, std::span<const double> b, int rounds,
                                     std::uint64_t seed) {
    if (a.size() != b.size() || a.empty()) throw InputError("paired test needs two equal-length non-empty samples");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    const double observed = std::abs(std::accumulate(diff.begin(), diff.end(), 0.0));
    Rng rng(seed);
    int extreme = 0;
    for (int r = 0; r < rounds; ++r) {
        double s = 0.0;
        for (double d : diff) s += (rng.next() & 1) ? d : -d;
        if (std::abs(s) >= observed - 1e-12) ++extreme;
    }
    return (extreme + 1.0) / (rounds + 1.0);
}

inline void write_eval_table(std::ostream& os, const std::vector<EvalResult>& rows) {
    os << "method\tndcg@1\tndcg@3\tndcg@5\ttop_engagement\tengagement_improvement_pct\n";
    for (const auto& r : rows) {
        os << r.method << '\t' << fmt_double(r.ndcg[0]) << '\t' << fmt_double(r.ndcg[1]) << '\t' << fmt_double(r.ndcg[2])
           << '\t' << (std::isnan(r.top_engagement) ? std::string("NA") : fmt_double(r.top_engagement)) << '\t'
           << (r.engagement_improvement_pct ? fmt_double(*r.engagement_improvement_pct) : std::string("NA")) << '\n';
    }
}

}  // namespace clarify
