#pragma once
// Click bias from adjacent-answer swaps: swap dataset, log-odds scatter,
// above-diagonal matrix, logistic click model, baseline click models and
// cross-entropy evaluation.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "io.hpp"
#include "synthlog.hpp"

namespace clarify {

// C_i = C'_{i+1} and C_{i+1} = C'_i (1-based i).
struct SwapTriple {
    std::string query_id;
    std::string pane_c;
    std::string pane_c_prime;
    int swap_index = 1;
    int answer_count = 2;

    bool operator==(const SwapTriple&) const = default;
};

// Every unordered pair of panes for one query with the same question and the
// same answers up to one adjacent transposition. C is the pane with the smaller id.
inline std::vector<SwapTriple> build_swap_dataset(std::span<const ClarificationPane> panes,
                                                  const StatsByPane* stats = nullptr,
                                                  std::int64_t min_impressions = 1) {
    std::map<std::tuple<std::string, std::string, std::vector<std::string>>, std::vector<const ClarificationPane*>>
        groups;
    for (const auto& p : panes) {
        if (stats) {
            auto it = stats->find(p.id);
            if (it == stats->end() || it->second.impressions < min_impressions) continue;
        }
        std::vector<std::string> multiset;
        for (const auto& a : p.answers) multiset.push_back(join(a.text));
        std::sort(multiset.begin(), multiset.end());
        groups[{p.query_id, join(p.question_text), multiset}].push_back(&p);
    }
    std::vector<SwapTriple> out;
    for (auto& [key, members] : groups) {
        std::sort(members.begin(), members.end(),
                  [](const ClarificationPane* a, const ClarificationPane* b) { return a->id < b->id; });
        for (std::size_t x = 0; x < members.size(); ++x) {
            for (std::size_t y = x + 1; y < members.size(); ++y) {
                const auto& c = *members[x];
                const auto& cp = *members[y];
                std::vector<int> diff;
                for (int k = 0; k < c.answer_count(); ++k)
                    if (c.answers[static_cast<std::size_t>(k)].text != cp.answers[static_cast<std::size_t>(k)].text)
                        diff.push_back(k);
                if (diff.size() != 2 || diff[1] != diff[0] + 1) continue;
                const auto i = static_cast<std::size_t>(diff[0]);
                if (c.answers[i].text != cp.answers[i + 1].text || c.answers[i + 1].text != cp.answers[i].text) continue;
                out.push_back({c.query_id, c.id, cp.id, diff[0] + 1, c.answer_count()});
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const SwapTriple& a, const SwapTriple& b) {
        return std::tie(a.query_id, a.pane_c, a.pane_c_prime) < std::tie(b.query_id, b.pane_c, b.pane_c_prime);
    });
    return out;
}

// ─── scatter ────────────────────────────────────────────────────────────────

// One answer observed at two adjacent positions: x at the lower (right) one,
// y at the higher (left) one.
struct SwapPoint {
    std::int64_t x_clicks = 0, x_impressions = 0;
    std::int64_t y_clicks = 0, y_impressions = 0;
    int answer_count = 2;
    int swap_index = 1;

    double x() const { return static_cast<double>(x_clicks) / static_cast<double>(x_impressions); }
    double y() const { return static_cast<double>(y_clicks) / static_cast<double>(y_impressions); }
};

inline const EngagementStats& stats_for(const StatsByPane& stats, const std::string& pane_id) {
    auto it = stats.find(pane_id);
    if (it == stats.end()) throw InputError("no statistics for pane " + pane_id);
    return it->second;
}

inline std::array<SwapPoint, 2> swap_points(const SwapTriple& t, const StatsByPane& stats) {
    const auto& c = stats_for(stats, t.pane_c);
    const auto& cp = stats_for(stats, t.pane_c_prime);
    if (c.impressions <= 0 || cp.impressions <= 0)
        throw std::domain_error("swap_points: pane without impressions in triple " + t.pane_c);
    const auto i = static_cast<std::size_t>(t.swap_index - 1);
    // point 1: answer C_i, at i+1 in C' (x) and at i in C (y)
    SwapPoint p1{cp.per_position_clicks[i + 1], cp.impressions, c.per_position_clicks[i], c.impressions,
                 t.answer_count, t.swap_index};
    // point 2: answer C_{i+1}, at i+1 in C (x) and at i in C' (y)
    SwapPoint p2{c.per_position_clicks[i + 1], c.impressions, cp.per_position_clicks[i], cp.impressions,
                 t.answer_count, t.swap_index};
    return {p1, p2};
}

inline double log_odds(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("log_odds: p must lie in (0,1)");
    return std::log(p / (1.0 - p));
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

// Ordinary least squares y = slope*x + intercept.
inline LinearFit fit_scatter_line(std::span<const std::pair<double, double>> points) {
    if (points.size() < 2) throw std::domain_error("fit_scatter_line: need at least 2 points");
    double mx = 0, my = 0;
    for (const auto& [x, y] : points) mx += x, my += y;
    mx /= static_cast<double>(points.size());
    my /= static_cast<double>(points.size());
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if (!(sxx > 0.0)) throw std::domain_error("fit_scatter_line: degenerate x");
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

// Smoothed log-odds coordinates of swap points.
inline std::vector<std::pair<double, double>> log_odds_points(std::span<const SwapPoint> points) {
    std::vector<std::pair<double, double>> out;
    out.reserve(points.size());
    for (const auto& p : points)
        out.emplace_back(log_odds(smoothed_rate(p.x_clicks, p.x_impressions)),
                         log_odds(smoothed_rate(p.y_clicks, p.y_impressions)));
    return out;
}

inline std::vector<SwapPoint> all_swap_points(std::span<const SwapTriple> triples, const StatsByPane& stats) {
    std::vector<SwapPoint> out;
    out.reserve(2 * triples.size());
    for (const auto& t : triples) {
        auto pts = swap_points(t, stats);
        out.push_back(pts[0]);
        out.push_back(pts[1]);
    }
    return out;
}

struct AboveDiagonalCell {
    std::int64_t above = 0, below = 0, ties = 0;
    double pct() const { return above + below == 0 ? 0.0 : 100.0 * static_cast<double>(above) / static_cast<double>(above + below); }
};

// (answer count, swap index) -> counts; ties excluded from the percentage.
using AboveDiagonalMatrix = std::map<std::pair<int, int>, AboveDiagonalCell>;

inline AboveDiagonalMatrix pct_above_diagonal(std::span<const SwapTriple> triples, const StatsByPane& stats) {
    AboveDiagonalMatrix m;
    for (const auto& p : all_swap_points(triples, stats)) {
        auto& cell = m[{p.answer_count, p.swap_index}];
        // compare y > x without division: y_c * x_n vs x_c * y_n
        const auto lhs = static_cast<long double>(p.y_clicks) * static_cast<long double>(p.x_impressions);
        const auto rhs = static_cast<long double>(p.x_clicks) * static_cast<long double>(p.y_impressions);
        if (lhs > rhs) ++cell.above;
        else if (lhs < rhs) ++cell.below;
        else ++cell.ties;
    }
    return m;
}

// ─── swap features and records ──────────────────────────────────────────────

struct SwapFeatures {
    double ctr_l = 0.0;  // smoothed rate of C_i
    double ctr_r = 0.0;  // smoothed rate of C_{i+1}
    double size_diff = 0.0;  // (size(C_i) - size(C_{i+1})) / (size(C_i) + size(C_{i+1}))
    int offset = 0;          // answers to the left of C_i
};

inline SwapFeatures swap_features(const ClarificationPane& c, int swap_index, const EngagementStats& stats) {
    const auto i = static_cast<std::size_t>(swap_index - 1);
    const double sa = c.answers[i].render_size, sb = c.answers[i + 1].render_size;
    return {smoothed_rate(stats.per_position_clicks[i], stats.impressions),
            smoothed_rate(stats.per_position_clicks[i + 1], stats.impressions), (sa - sb) / (sa + sb),
            swap_index - 1};
}

// Everything the click models need about one triple.
struct SwapRecord {
    SwapTriple triple;
    SwapFeatures features;
    double target_l = 0.0;  // smoothed rate of C'_i
    double target_r = 0.0;  // smoothed rate of C'_{i+1}
    std::int64_t impressions_c = 0, impressions_cp = 0;
    std::vector<std::int64_t> clicks_c, clicks_cp;
};

inline std::vector<SwapRecord> make_swap_records(std::span<const SwapTriple> triples,
                                                 std::span<const ClarificationPane> panes, const StatsByPane& stats) {
    std::map<std::string, const ClarificationPane*> by_id;
    for (const auto& p : panes) by_id[p.id] = &p;
    std::vector<SwapRecord> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        auto it = by_id.find(t.pane_c);
        if (it == by_id.end()) throw InputError("unknown pane " + t.pane_c);
        const auto& sc = stats_for(stats, t.pane_c);
        const auto& scp = stats_for(stats, t.pane_c_prime);
        if (sc.impressions <= 0 || scp.impressions <= 0)
            throw std::domain_error("swap record: pane without impressions in triple " + t.pane_c);
        SwapRecord r;
        r.triple = t;
        r.features = swap_features(*it->second, t.swap_index, sc);
        const auto i = static_cast<std::size_t>(t.swap_index - 1);
        r.target_l = smoothed_rate(scp.per_position_clicks[i], scp.impressions);
        r.target_r = smoothed_rate(scp.per_position_clicks[i + 1], scp.impressions);
        r.impressions_c = sc.impressions;
        r.impressions_cp = scp.impressions;
        r.clicks_c = sc.per_position_clicks;
        r.clicks_cp = scp.per_position_clicks;
        out.push_back(std::move(r));
    }
    return out;
}

// Fold of each record: distinct query ids in sorted order are dealt round-robin,
// so all triples of a query share a fold.
inline std::vector<int> assign_folds(std::span<const SwapRecord> records, int folds) {
    std::map<std::string, int> fold_of;
    for (const auto& r : records) fold_of.emplace(r.triple.query_id, 0);
    int next = 0;
    for (auto& [q, f] : fold_of) f = next++ % folds;
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(fold_of.at(r.triple.query_id));
    return out;
}

// ─── logistic regression with fractional labels ────────────────────────────

struct LogregOptions {
    int max_iterations = 1000;
    double tolerance = 1e-10;  // gradient norm in standardized coordinates
    bool logit_ctr = false;    // feed CTR features as log-odds instead of rates
};

struct LogregFit {
    std::vector<double> weights;  // original feature units
    double intercept = 0.0;
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;

    double predict(std::span<const double> x) const {
        double z = intercept;
        for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * x[j];
        return sigmoid(z);
    }
};

namespace bias_detail {

inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

}  // namespace bias_detail

// Minimizes the weighted mean of -[y ln s(z) + (1-y) ln(1-s(z))] by damped
// Newton steps. Columns are standardized internally; constant columns get weight 0.
inline LogregFit fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                              const std::vector<double>& w, const LogregOptions& options = {}) {
    const std::size_t n = x.size();
    if (n == 0 || y.size() != n || w.size() != n) throw InputError("fit_logistic: inconsistent data");
    const std::size_t d = x.front().size();
    double wsum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (x[r].size() != d) throw InputError("fit_logistic: ragged features");
        if (!(y[r] >= 0.0 && y[r] <= 1.0) || !(w[r] >= 0.0)) throw InputError("fit_logistic: bad label or weight");
        wsum += w[r];
    }
    if (!(wsum > 0)) throw InputError("fit_logistic: zero total weight");

    std::vector<double> mean(d, 0.0), sd(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) mean[j] += w[r] * x[r][j];
    for (auto& m : mean) m /= wsum;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) sd[j] += w[r] * (x[r][j] - mean[j]) * (x[r][j] - mean[j]);
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < d; ++j) {
        sd[j] = std::sqrt(sd[j] / wsum);
        if (sd[j] > 1e-12 * (1.0 + std::abs(mean[j]))) active.push_back(j);
    }
    const std::size_t m = active.size() + 1;  // last = intercept
    std::vector<double> z(n * m);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t a = 0; a < active.size(); ++a) {
            const auto j = active[a];
            z[r * m + a] = (x[r][j] - mean[j]) / sd[j];
        }
        z[r * m + m - 1] = 1.0;
    }

    auto objective = [&](const std::vector<double>& beta, std::vector<double>* grad) {
        double f = 0.0;
        if (grad) grad->assign(m, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t a = 0; a < m; ++a) s += beta[a] * z[r * m + a];
            f -= w[r] * (y[r] * bias_detail::log_sigmoid(s) + (1.0 - y[r]) * bias_detail::log_sigmoid(-s));
            if (grad) {
                const double g = w[r] * (sigmoid(s) - y[r]);
                for (std::size_t a = 0; a < m; ++a) (*grad)[a] += g * z[r * m + a];
            }
        }
        if (grad)
            for (auto& g : *grad) g /= wsum;
        return f / wsum;
    };

    auto hessian = [&](const std::vector<double>& beta) {
        std::vector<double> h(m * m, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t a = 0; a < m; ++a) s += beta[a] * z[r * m + a];
            const double q = sigmoid(s);
            const double c = w[r] * q * (1.0 - q) / wsum;
            for (std::size_t a = 0; a < m; ++a)
                for (std::size_t b = 0; b <= a; ++b) h[a * m + b] += c * z[r * m + a] * z[r * m + b];
        }
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < a; ++b) h[b * m + a] = h[a * m + b];
            h[a * m + a] += 1e-12;
        }
        return h;
    };
    // Gaussian elimination with partial pivoting; empty on a singular system.
    auto solve = [&](std::vector<double> h, std::vector<double> rhs) -> std::vector<double> {
        for (std::size_t c = 0; c < m; ++c) {
            std::size_t piv = c;
            for (std::size_t r = c + 1; r < m; ++r)
                if (std::abs(h[r * m + c]) > std::abs(h[piv * m + c])) piv = r;
            if (!(std::abs(h[piv * m + c]) > 0.0)) return {};
            if (piv != c) {
                for (std::size_t k = 0; k < m; ++k) std::swap(h[c * m + k], h[piv * m + k]);
                std::swap(rhs[c], rhs[piv]);
            }
            for (std::size_t r = c + 1; r < m; ++r) {
                const double f = h[r * m + c] / h[c * m + c];
                for (std::size_t k = c; k < m; ++k) h[r * m + k] -= f * h[c * m + k];
                rhs[r] -= f * rhs[c];
            }
        }
        std::vector<double> x(m);
        for (std::size_t c = m; c-- > 0;) {
            double v = rhs[c];
            for (std::size_t k = c + 1; k < m; ++k) v -= h[c * m + k] * x[k];
            x[c] = v / h[c * m + c];
            if (!std::isfinite(x[c])) return {};
        }
        return x;
    };

    std::vector<double> beta(m, 0.0), grad, trial(m), trial_grad;
    double f = objective(beta, &grad);
    LogregFit fit;
    int it = 0;
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    double gn = norm(grad);
    for (; it < options.max_iterations && gn >= options.tolerance; ++it) {
        // Damped Newton. Near the optimum f stops resolving the decrease, so a
        // step that keeps f level and shrinks the gradient is also accepted.
        auto dir = solve(hessian(beta), grad);
        double gd = 0.0;
        for (std::size_t a = 0; a < m && !dir.empty(); ++a) gd += grad[a] * dir[a];
        if (dir.empty() || !(gd > 0)) dir = grad, gd = gn * gn;
        const double f_tol = 1e-15 * std::max(1.0, std::abs(f));
        bool accepted = false;
        for (double t = 1.0; t > 1e-20; t *= 0.5) {
            for (std::size_t a = 0; a < m; ++a) trial[a] = beta[a] - t * dir[a];
            const double f_trial = objective(trial, &trial_grad);
            if (!std::isfinite(f_trial)) throw NumericalError("fit_logistic: non-finite objective");
            if (f_trial <= f - 1e-4 * t * gd || (f_trial <= f + f_tol && norm(trial_grad) < gn)) {
                f = f_trial;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        beta = trial;
        grad = trial_grad;
        gn = norm(grad);
    }
    fit.iterations = it;
    fit.grad_norm = gn;
    fit.converged = gn < options.tolerance;

    fit.weights.assign(d, 0.0);
    fit.intercept = beta[m - 1];
    for (std::size_t a = 0; a < active.size(); ++a) {
        const auto j = active[a];
        fit.weights[j] = beta[a] / sd[j];
        fit.intercept -= beta[a] * mean[j] / sd[j];
    }
    return fit;
}

// ─── click logistic regression (labels L and R) ────────────────────────────

inline constexpr std::array<const char*, 4> kSwapFeatureNames = {"CTR_L", "CTR_R", "SIZE_DIFF", "OFFSET"};

struct ClickLogreg {
    LogregFit label_l;
    LogregFit label_r;
    bool logit_ctr = false;

    std::vector<double> design(const SwapFeatures& f) const {
        auto t = [&](double p) { return logit_ctr ? log_odds(p) : p; };
        return {t(f.ctr_l), t(f.ctr_r), f.size_diff, static_cast<double>(f.offset)};
    }
    std::pair<double, double> predict(const SwapFeatures& f) const {
        const auto x = design(f);
        return {label_l.predict(x), label_r.predict(x)};
    }
};

// Fits both labels on the given records, each weighted by the C' impressions.
inline ClickLogreg fit_click_logreg_on(std::span<const SwapRecord> records, const LogregOptions& options = {}) {
    ClickLogreg model;
    model.logit_ctr = options.logit_ctr;
    std::vector<std::vector<double>> x;
    std::vector<double> yl, yr, w;
    for (const auto& r : records) {
        x.push_back(model.design(r.features));
        yl.push_back(r.target_l);
        yr.push_back(r.target_r);
        w.push_back(static_cast<double>(r.impressions_cp));
    }
    model.label_l = fit_logistic(x, yl, w, options);
    model.label_r = fit_logistic(x, yr, w, options);
    return model;
}

struct LogregCvReport {
    std::vector<ClickLogreg> folds;
    std::vector<double> mean_l;  // mean weights per feature across folds
    std::vector<double> mean_r;
    double mean_intercept_l = 0.0, mean_intercept_r = 0.0;
    bool all_converged = true;
};

// k-fold cross-validation: one model pair per fold, trained on the other folds.
inline LogregCvReport fit_click_logreg(std::span<const SwapRecord> records, int folds = 10,
                                       const LogregOptions& options = {}) {
    if (folds < 2) throw InputError("fit_click_logreg: folds must be >= 2");
    if (static_cast<int>(records.size()) < folds) throw InputError("fit_click_logreg: fewer triples than folds");
    const auto fold_of = assign_folds(records, folds);
    LogregCvReport rep;
    rep.mean_l.assign(4, 0.0);
    rep.mean_r.assign(4, 0.0);
    for (int f = 0; f < folds; ++f) {
        std::vector<SwapRecord> train;
        for (std::size_t k = 0; k < records.size(); ++k)
            if (fold_of[k] != f) train.push_back(records[k]);
        auto m = fit_click_logreg_on(train, options);
        rep.all_converged = rep.all_converged && m.label_l.converged && m.label_r.converged;
        for (std::size_t j = 0; j < 4; ++j) {
            rep.mean_l[j] += m.label_l.weights[j] / folds;
            rep.mean_r[j] += m.label_r.weights[j] / folds;
        }
        rep.mean_intercept_l += m.label_l.intercept / folds;
        rep.mean_intercept_r += m.label_r.intercept / folds;
        rep.folds.push_back(std::move(m));
    }
    return rep;
}

// ─── click models ───────────────────────────────────────────────────────────

enum class ClickModelKind { best_possible, blind, no_bias, examination, cascade, logistic };

inline constexpr std::array<ClickModelKind, 6> kAllClickModels = {
    ClickModelKind::best_possible, ClickModelKind::blind,   ClickModelKind::no_bias,
    ClickModelKind::examination,   ClickModelKind::cascade, ClickModelKind::logistic};

inline std::string_view to_string(ClickModelKind k) {
    switch (k) {
        case ClickModelKind::best_possible: return "best_possible";
        case ClickModelKind::blind: return "blind";
        case ClickModelKind::no_bias: return "no_bias";
        case ClickModelKind::examination: return "examination";
        case ClickModelKind::cascade: return "cascade";
        case ClickModelKind::logistic: return "logistic";
    }
    return "blind";
}

inline ClickModelKind parse_click_model_kind(std::string_view s) {
    for (auto k : kAllClickModels)
        if (to_string(k) == s) return k;
    throw InputError("unknown click model '" + std::string(s) + "'");
}

inline constexpr double kMinRate = 1e-6;

inline double clamp_rate(double q) { return std::clamp(q, kMinRate, 1.0 - kMinRate); }

struct ExaminationFit {
    std::map<int, std::vector<double>> exam;  // answer count -> examination prob per position
    std::vector<std::string> warnings;
    int iterations = 0;
    bool converged = true;
};

// Position-based model fitted by EM on both panes of every record: one
// attractiveness per answer of a triple, one examination probability per
// (answer count, position), with position 1 fixed at 1.
inline ExaminationFit fit_examination(std::span<const SwapRecord> records, double tolerance = 1e-8,
                                      int max_iterations = 20000) {
    ExaminationFit fit;
    std::map<int, std::vector<const SwapRecord*>> by_k;
    for (const auto& r : records) by_k[r.triple.answer_count].push_back(&r);
    for (const auto& [k, recs] : by_k) {
        struct Obs {
            int pos;
            std::size_t item;
            double n, c;
        };
        std::vector<Obs> obs;
        std::size_t items = 0;
        for (const auto* r : recs) {
            const int i = r->triple.swap_index - 1;
            for (int p = 0; p < k; ++p) {
                const std::size_t item = items + static_cast<std::size_t>(p);
                obs.push_back({p, item, static_cast<double>(r->impressions_c),
                               static_cast<double>(r->clicks_c[static_cast<std::size_t>(p)])});
                // where does answer p of C sit in C'?
                const int pp = p == i ? i + 1 : p == i + 1 ? i : p;
                obs.push_back({pp, item, static_cast<double>(r->impressions_cp),
                               static_cast<double>(r->clicks_cp[static_cast<std::size_t>(pp)])});
            }
            items += static_cast<std::size_t>(k);
        }
        std::vector<double> pos_n(static_cast<std::size_t>(k), 0.0), pos_c(static_cast<std::size_t>(k), 0.0);
        for (const auto& o : obs) pos_n[static_cast<std::size_t>(o.pos)] += o.n, pos_c[static_cast<std::size_t>(o.pos)] += o.c;
        std::vector<bool> pinned(static_cast<std::size_t>(k), false);
        for (int p = 1; p < k; ++p)
            if (pos_n[static_cast<std::size_t>(p)] == 0 || pos_c[static_cast<std::size_t>(p)] == 0) {
                pinned[static_cast<std::size_t>(p)] = true;
                fit.warnings.push_back("examination: position " + std::to_string(p + 1) + " of " + std::to_string(k) +
                                       "-answer panes has no clicks; pinned to the previous position");
            }

        std::vector<double> e(static_cast<std::size_t>(k), 0.5), alpha(items, 0.5);
        e[0] = 1.0;
        std::vector<double> e_num(e.size()), alpha_num(items), alpha_den(items);
        int it = 0;
        bool done = false;
        for (; it < max_iterations && !done; ++it) {
            std::fill(e_num.begin(), e_num.end(), 0.0);
            std::fill(alpha_num.begin(), alpha_num.end(), 0.0);
            std::fill(alpha_den.begin(), alpha_den.end(), 0.0);
            for (const auto& o : obs) {
                const double ep = e[static_cast<std::size_t>(o.pos)], a = alpha[o.item];
                const double miss = std::max(1.0 - ep * a, 1e-300);
                const double post_e = ep * (1.0 - a) / miss;
                const double post_a = a * (1.0 - ep) / miss;
                e_num[static_cast<std::size_t>(o.pos)] += o.c + (o.n - o.c) * post_e;
                alpha_num[o.item] += o.c + (o.n - o.c) * post_a;
                alpha_den[o.item] += o.n;
            }
            double change = 0.0;
            for (std::size_t p = 1; p < e.size(); ++p) {
                const double v = pinned[p] ? e[p - 1] : e_num[p] / pos_n[p];
                change = std::max(change, std::abs(v - e[p]));
                e[p] = v;
            }
            for (std::size_t a = 0; a < items; ++a) {
                const double v = alpha_den[a] > 0 ? alpha_num[a] / alpha_den[a] : alpha[a];
                change = std::max(change, std::abs(v - alpha[a]));
                alpha[a] = v;
            }
            done = change < tolerance;
        }
        fit.iterations = std::max(fit.iterations, it);
        if (!done) {
            fit.converged = false;
            fit.warnings.push_back("examination: EM did not reach tolerance for " + std::to_string(k) + "-answer panes");
        }
        for (auto& x : e) x = std::max(x, kMinRate);
        fit.exam[k] = e;
    }
    return fit;
}

// Cascade prediction of the swapped pair from C alone. Attractiveness is
// inverted position by position, alpha_p = ctr_p / reach_p, where a user who
// clicks keeps scanning with probability `cont`:
// reach_{p+1} = reach_p * (1 - alpha_p * (1 - cont)). cont = 0 is the classic
// single-click cascade.
inline std::pair<double, double> cascade_predict(const SwapRecord& r, double cont) {
    const auto i = static_cast<std::size_t>(r.triple.swap_index - 1);
    const double stop = 1.0 - cont;
    double reach = 1.0;
    for (std::size_t p = 0; p < i; ++p) {
        const double a = std::clamp(smoothed_rate(r.clicks_c[p], r.impressions_c) / reach, kMinRate, 1.0 - kMinRate);
        reach = std::max(reach * (1.0 - a * stop), kMinRate);
    }
    const double ctr_a = r.features.ctr_l, ctr_b = r.features.ctr_r;
    const double alpha_a = std::clamp(ctr_a / reach, kMinRate, 1.0 - kMinRate);
    const double pass_a = 1.0 - alpha_a * stop;
    const double alpha_b = std::clamp(ctr_b / (reach * pass_a), kMinRate, 1.0 - kMinRate);
    return {clamp_rate(ctr_b / pass_a), clamp_rate(ctr_a * (1.0 - alpha_b * stop))};
}

// Continuation probability maximizing the likelihood of the C' rates given C:
// coarse grid over [0, 1], then golden-section refinement.
inline double fit_cascade_continue(std::span<const SwapRecord> train) {
    auto loss = [&](double cont) {
        double s = 0.0;
        for (const auto& r : train) {
            const auto [ql, qr] = cascade_predict(r, cont);
            const double w = static_cast<double>(r.impressions_cp);
            s -= w * (r.target_l * std::log(ql) + (1 - r.target_l) * std::log(1 - ql) + r.target_r * std::log(qr) +
                      (1 - r.target_r) * std::log(1 - qr));
        }
        return s;
    };
    constexpr int grid = 50;
    int best = 0;
    double best_loss = loss(0.0);
    for (int g = 1; g <= grid; ++g) {
        const double l = loss(static_cast<double>(g) / grid);
        if (l < best_loss) best_loss = l, best = g;
    }
    double a = std::max(0, best - 1) / static_cast<double>(grid), b = std::min(grid, best + 1) / static_cast<double>(grid);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = loss(x1), f2 = loss(x2);
    for (int k = 0; k < 40; ++k) {
        if (f1 <= f2) b = x2, x2 = x1, f2 = f1, x1 = b - phi * (b - a), f1 = loss(x1);
        else a = x1, x1 = x2, f1 = f2, x2 = a + phi * (b - a), f2 = loss(x2);
    }
    const double refined = 0.5 * (a + b);
    const double at_grid = static_cast<double>(best) / grid;
    return loss(refined) <= best_loss ? refined : at_grid;
}

// Joint cascade MLE of each answer's attractiveness from both panes of a
// record (single-click cascade: examined = impressions without an earlier click).
inline std::vector<double> cascade_mle(const SwapRecord& r) {
    const int k = r.triple.answer_count;
    const int i = r.triple.swap_index - 1;
    std::vector<double> num(static_cast<std::size_t>(k), 0.0), den(static_cast<std::size_t>(k), 0.0);
    auto add = [&](const std::vector<std::int64_t>& clicks, std::int64_t n, bool swapped) {
        double before = 0.0;
        for (int p = 0; p < k; ++p) {
            const int answer = !swapped ? p : p == i ? i + 1 : p == i + 1 ? i : p;
            num[static_cast<std::size_t>(answer)] += static_cast<double>(clicks[static_cast<std::size_t>(p)]);
            den[static_cast<std::size_t>(answer)] += static_cast<double>(n) - before;
            before += static_cast<double>(clicks[static_cast<std::size_t>(p)]);
        }
    };
    add(r.clicks_c, r.impressions_c, false);
    add(r.clicks_cp, r.impressions_cp, true);
    std::vector<double> alpha(static_cast<std::size_t>(k));
    for (std::size_t p = 0; p < alpha.size(); ++p) alpha[p] = den[p] > 0 ? num[p] / den[p] : 0.0;
    return alpha;
}

struct ClickModel {
    ClickModelKind kind = ClickModelKind::blind;
    double blind_rate = 0.5;
    double cascade_continue = 0.0;
    ExaminationFit examination;
    ClickLogreg logistic;

    // Predicted (C'_i, C'_{i+1}) rates from what was observed on C.
    std::pair<double, double> predict(const SwapRecord& r) const {
        const auto& f = r.features;
        const auto i = static_cast<std::size_t>(r.triple.swap_index - 1);
        double ql = 0.5, qr = 0.5;
        switch (kind) {
            case ClickModelKind::best_possible:
                ql = r.target_l, qr = r.target_r;
                break;
            case ClickModelKind::blind:
                ql = qr = blind_rate;
                break;
            case ClickModelKind::no_bias:
                ql = f.ctr_r, qr = f.ctr_l;
                break;
            case ClickModelKind::examination: {
                auto it = examination.exam.find(r.triple.answer_count);
                if (it == examination.exam.end()) {
                    ql = f.ctr_r, qr = f.ctr_l;
                } else {
                    const double ei = it->second[i], ej = it->second[i + 1];
                    ql = f.ctr_r * ei / ej;
                    qr = f.ctr_l * ej / ei;
                }
                break;
            }
            case ClickModelKind::cascade:
                std::tie(ql, qr) = cascade_predict(r, cascade_continue);
                break;
            case ClickModelKind::logistic:
                std::tie(ql, qr) = logistic.predict(f);
                break;
        }
        return {clamp_rate(ql), clamp_rate(qr)};
    }
};

inline ClickModel fit_click_model(ClickModelKind kind, std::span<const SwapRecord> train,
                                  const LogregOptions& options = {}) {
    ClickModel m;
    m.kind = kind;
    switch (kind) {
        case ClickModelKind::blind: {
            if (train.empty()) throw InputError("blind model needs training data");
            double s = 0.0;
            for (const auto& r : train) s += r.target_l + r.target_r;
            m.blind_rate = s / (2.0 * static_cast<double>(train.size()));
            break;
        }
        case ClickModelKind::examination:
            m.examination = fit_examination(train);
            break;
        case ClickModelKind::cascade:
            m.cascade_continue = fit_cascade_continue(train);
            break;
        case ClickModelKind::logistic:
            m.logistic = fit_click_logreg_on(train, options);
            break;
        default:
            break;
    }
    return m;
}

// Mean over points of -[p ln q + (1-p) ln(1-q)].
inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) throw InputError("cross_entropy: size mismatch or empty");
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (!(q[k] > 0.0 && q[k] < 1.0)) throw std::domain_error("cross_entropy: q must lie in (0,1)");
        s -= p[k] * std::log(q[k]) + (1.0 - p[k]) * std::log(1.0 - q[k]);
    }
    return s / static_cast<double>(p.size());
}

struct CeRow {
    ClickModelKind kind;
    std::vector<double> per_fold;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation over folds
    std::vector<std::string> warnings;
};

// Cross-validated cross entropy of each model on held-out triples; each triple
// contributes its two swapped answers as points.
inline std::vector<CeRow> evaluate_click_models(std::span<const SwapRecord> records, int folds = 10,
                                                std::span<const ClickModelKind> kinds = kAllClickModels,
                                                const LogregOptions& options = {}) {
    if (folds < 2) throw InputError("evaluate_click_models: folds must be >= 2");
    if (static_cast<int>(records.size()) < folds) throw InputError("evaluate_click_models: fewer triples than folds");
    const auto fold_of = assign_folds(records, folds);
    std::vector<CeRow> rows;
    for (auto kind : kinds) rows.push_back({kind, {}, 0.0, 0.0, {}});
    for (int f = 0; f < folds; ++f) {
        std::vector<SwapRecord> train, test;
        for (std::size_t k = 0; k < records.size(); ++k) (fold_of[k] == f ? test : train).push_back(records[k]);
        if (test.empty()) continue;
        std::vector<double> truth;
        for (const auto& r : test) truth.push_back(r.target_l), truth.push_back(r.target_r);
        for (auto& row : rows) {
            const auto model = fit_click_model(row.kind, train, options);
            for (const auto& w : model.examination.warnings) row.warnings.push_back(w);
            std::vector<double> pred;
            for (const auto& r : test) {
                auto [ql, qr] = model.predict(r);
                pred.push_back(ql);
                pred.push_back(qr);
            }
            row.per_fold.push_back(cross_entropy(truth, pred));
        }
    }
    for (auto& row : rows) {
        const auto n = static_cast<double>(row.per_fold.size());
        row.mean = std::accumulate(row.per_fold.begin(), row.per_fold.end(), 0.0) / n;
        double v = 0.0;
        for (double x : row.per_fold) v += (x - row.mean) * (x - row.mean);
        row.stddev = n > 1 ? std::sqrt(v / (n - 1)) : 0.0;
        std::sort(row.warnings.begin(), row.warnings.end());
        row.warnings.erase(std::unique(row.warnings.begin(), row.warnings.end()), row.warnings.end());
    }
    return rows;
}

}  // namespace clarify
