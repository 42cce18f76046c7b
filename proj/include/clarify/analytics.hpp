#pragma once
// Engagement breakdowns, conditional click curves, dissatisfaction, multi-click
// rate and annotator agreement over impression logs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "io.hpp"

namespace clarify {

enum class Dimension {
    template_id,
    answer_count,
    click_entropy_bin,
    query_length,
    query_type,
    unique_url_bin,
    url_entropy_bin
};

inline constexpr std::array<Dimension, 7> kAllDimensions = {
    Dimension::template_id,  Dimension::answer_count,   Dimension::click_entropy_bin, Dimension::query_length,
    Dimension::query_type,   Dimension::unique_url_bin, Dimension::url_entropy_bin};

inline std::string_view to_string(Dimension d) {
    switch (d) {
        case Dimension::template_id: return "template";
        case Dimension::answer_count: return "answer_count";
        case Dimension::click_entropy_bin: return "click_entropy_bin";
        case Dimension::query_length: return "query_length";
        case Dimension::query_type: return "query_type";
        case Dimension::unique_url_bin: return "unique_url_bin";
        case Dimension::url_entropy_bin: return "url_entropy_bin";
    }
    return "template";
}

inline Dimension parse_dimension(std::string_view s) {
    for (auto d : kAllDimensions)
        if (to_string(d) == s) return d;
    throw InputError("unknown dimension '" + std::string(s) + "'");
}

inline bool is_box_dimension(Dimension d) {
    return d == Dimension::click_entropy_bin || d == Dimension::unique_url_bin || d == Dimension::url_entropy_bin;
}

struct BoxStats {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct BreakdownRow {
    std::string group;  // query_type only: question / ambiguity / traffic
    std::string bucket;
    std::int64_t impressions = 0;
    std::int64_t engaged = 0;
    double relative_engagement = 0.0;
    std::optional<BoxStats> box;  // box-plot dimensions: over per-pane relative engagement
};

struct BreakdownTable {
    Dimension dimension = Dimension::template_id;
    double overall_rate = 0.0;
    std::vector<BreakdownRow> rows;
};

struct AnalyticsOptions {
    std::int64_t min_impressions = 10;
    int entropy_bins = 5;
    // unique clicked URL bins: inclusive upper edges; counts above the last edge go to "N+"
    std::vector<int> url_count_edges{0, 1, 2, 3, 5, 10};
    int url_entropy_bins = 5;  // equal width over [0, 1]
    int max_query_length = 10;  // longer queries share the last bucket
};

// ─── elementary measures ────────────────────────────────────────────────────

// Natural-log entropy of a distribution, 0 ln 0 = 0.
inline double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

// Entropy divided by ln(#outcomes); 0 for fewer than two outcomes.
inline double normalized_entropy(const std::vector<double>& p) {
    if (p.size() < 2) return 0.0;
    return entropy(p) / std::log(static_cast<double>(p.size()));
}

// Normalized entropy of a URL click histogram; 0 without history or with one URL.
inline double url_click_entropy_norm(const UrlClicks& clicks) {
    std::vector<double> p;
    double total = 0.0;
    for (const auto& [url, c] : clicks)
        if (c > 0) {
            p.push_back(static_cast<double>(c));
            total += static_cast<double>(c);
        }
    if (p.size() < 2) return 0.0;
    for (auto& x : p) x /= total;
    return normalized_entropy(p);
}

inline std::int64_t unique_clicked_urls(const UrlClicks& clicks) {
    std::int64_t n = 0;
    for (const auto& [url, c] : clicks) n += c > 0 ? 1 : 0;
    return n;
}

// Linear-interpolation quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) throw std::domain_error("quantile of empty sample");
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline BoxStats box_stats(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return {values.front(), quantile_sorted(values, 0.25), quantile_sorted(values, 0.5), quantile_sorted(values, 0.75),
            values.back()};
}

// Panes with at least `min_impressions` impressions.
inline StatsByPane filter_min_impressions(const StatsByPane& stats, std::int64_t min_impressions) {
    StatsByPane out;
    for (const auto& [id, s] : stats)
        if (s.impressions >= min_impressions) out.emplace(id, s);
    return out;
}

// ─── breakdowns ─────────────────────────────────────────────────────────────

namespace analytics_detail {

struct Bucketed {
    std::string group;
    std::string bucket;
    int order = 0;  // sort key within group
};

inline std::string range_label(double lo, double hi) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "[%.4f,%.4f]", lo, hi);
    return buf;
}

inline std::string url_count_label(std::int64_t n, const std::vector<int>& edges, int& order) {
    int prev = -1;
    for (std::size_t b = 0; b < edges.size(); ++b) {
        if (n <= edges[b]) {
            order = static_cast<int>(b);
            return prev + 1 == edges[b] ? std::to_string(edges[b])
                                        : std::to_string(prev + 1) + "-" + std::to_string(edges[b]);
        }
        prev = edges[b];
    }
    order = static_cast<int>(edges.size());
    return std::to_string(prev + 1) + "+";
}

}  // namespace analytics_detail

// Relative engagement per bucket over panes with >= min_impressions. Every pane
// falls in one bucket per group, so impression-weighted relatives average to 1.
inline BreakdownTable engagement_breakdown(std::span<const ImpressionRecord> log,
                                           std::span<const ClarificationPane> panes,
                                           std::span<const Query> queries, Dimension dimension,
                                           const HistoricalClicks* historical = nullptr,
                                           const AnalyticsOptions& options = {}) {
    using analytics_detail::Bucketed;
    const bool url_dim = dimension == Dimension::unique_url_bin || dimension == Dimension::url_entropy_bin;
    if (url_dim && historical == nullptr)
        throw InputError(std::string(to_string(dimension)) + " needs historical URL clicks");

    const auto stats = filter_min_impressions(accumulate_stats(log, panes), options.min_impressions);
    std::map<std::string, const Query*> query_by_id;
    for (const auto& q : queries) query_by_id[q.id] = &q;
    std::map<std::string, const ClarificationPane*> pane_by_id;
    for (const auto& p : panes) pane_by_id[p.id] = &p;

    // Per-pane bucket assignment.
    std::vector<std::pair<std::string, std::vector<Bucketed>>> assigned;
    std::vector<std::pair<std::string, double>> pane_entropy;
    for (const auto& [id, s] : stats) {
        const auto& pane = *pane_by_id.at(id);
        const Query* q = nullptr;
        if (auto it = query_by_id.find(pane.query_id); it != query_by_id.end()) q = it->second;
        const bool needs_query = dimension == Dimension::query_length || dimension == Dimension::query_type || url_dim;
        if (needs_query && q == nullptr) throw InputError("pane " + id + " references unknown query " + pane.query_id);
        std::vector<Bucketed> b;
        switch (dimension) {
            case Dimension::template_id:
                b.push_back({"", std::string(to_string(pane.template_id)), static_cast<int>(pane.template_id)});
                break;
            case Dimension::answer_count:
                b.push_back({"", std::to_string(pane.answer_count()), pane.answer_count()});
                break;
            case Dimension::click_entropy_bin:
                if (pane.answer_count() != kMaxAnswers) continue;
                pane_entropy.emplace_back(id, normalized_entropy(conditional_click_distribution(s)));
                continue;
            case Dimension::query_length: {
                const int len = std::min(static_cast<int>(q->text.size()), options.max_query_length);
                const std::string label = static_cast<int>(q->text.size()) >= options.max_query_length
                                              ? std::to_string(options.max_query_length) + "+"
                                              : std::to_string(len);
                b.push_back({"", label, len});
                break;
            }
            case Dimension::query_type:
                b.push_back({"question", q->is_question ? "natural_language_question" : "other", q->is_question ? 0 : 1});
                b.push_back({"ambiguity", std::string(to_string(q->ambiguity_class)),
                             static_cast<int>(q->ambiguity_class)});
                b.push_back({"traffic", std::string(to_string(q->traffic_class)), static_cast<int>(q->traffic_class)});
                break;
            case Dimension::unique_url_bin: {
                UrlClicks none;
                auto it = historical->find(q->id);
                const auto& clicks = it == historical->end() ? none : it->second;
                int order = 0;
                auto label = analytics_detail::url_count_label(unique_clicked_urls(clicks), options.url_count_edges,
                                                                order);
                b.push_back({"", label, order});
                break;
            }
            case Dimension::url_entropy_bin: {
                UrlClicks none;
                auto it = historical->find(q->id);
                const double h = url_click_entropy_norm(it == historical->end() ? none : it->second);
                const int nb = options.url_entropy_bins;
                const int bin = std::min(nb - 1, static_cast<int>(h * nb));
                b.push_back({"", analytics_detail::range_label(static_cast<double>(bin) / nb,
                                                              static_cast<double>(bin + 1) / nb),
                             bin});
                break;
            }
        }
        assigned.emplace_back(id, std::move(b));
    }

    if (dimension == Dimension::click_entropy_bin && !pane_entropy.empty()) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& [id, h] : pane_entropy) lo = std::min(lo, h), hi = std::max(hi, h);
        const int nb = options.entropy_bins;
        const double width = (hi - lo) / nb;
        for (const auto& [id, h] : pane_entropy) {
            int bin = width > 0 ? static_cast<int>((h - lo) / width) : nb - 1;
            bin = std::clamp(bin, 0, nb - 1);
            assigned.push_back({id, {{"", analytics_detail::range_label(lo + bin * width, lo + (bin + 1) * width), bin}}});
        }
    }
    if (assigned.empty()) throw InputError("no panes qualify for the " + std::string(to_string(dimension)) + " breakdown");

    std::int64_t total_imp = 0, total_eng = 0;
    for (const auto& [id, b] : assigned) {
        total_imp += stats.at(id).impressions;
        total_eng += stats.at(id).engaged_impressions;
    }
    BreakdownTable table;
    table.dimension = dimension;
    table.overall_rate = static_cast<double>(total_eng) / static_cast<double>(total_imp);

    struct Acc {
        std::int64_t imp = 0, eng = 0;
        std::vector<double> pane_rel;
    };
    std::map<std::tuple<std::string, int, std::string>, Acc> acc;
    for (const auto& [id, buckets] : assigned) {
        const auto& s = stats.at(id);
        for (const auto& b : buckets) {
            auto& a = acc[{b.group, b.order, b.bucket}];
            a.imp += s.impressions;
            a.eng += s.engaged_impressions;
            if (table.overall_rate > 0) a.pane_rel.push_back(engagement_rate(s) / table.overall_rate);
        }
    }
    for (auto& [key, a] : acc) {
        BreakdownRow row;
        row.group = std::get<0>(key);
        row.bucket = std::get<2>(key);
        row.impressions = a.imp;
        row.engaged = a.eng;
        const double rate = static_cast<double>(a.eng) / static_cast<double>(a.imp);
        row.relative_engagement = table.overall_rate > 0 ? rate / table.overall_rate : 0.0;
        if (is_box_dimension(dimension) && !a.pane_rel.empty()) row.box = box_stats(a.pane_rel);
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline void write_breakdown_tsv(std::ostream& out, const BreakdownTable& t) {
    const bool box = is_box_dimension(t.dimension);
    const bool grouped = t.dimension == Dimension::query_type;
    if (grouped) out << "group\t";
    out << "bucket\timpressions\trelative_engagement";
    if (box) out << "\tmin\tq1\tmedian\tq3\tmax";
    out << '\n';
    for (const auto& r : t.rows) {
        if (grouped) out << r.group << '\t';
        out << r.bucket << '\t' << r.impressions << '\t' << fmt_double(r.relative_engagement);
        if (box) {
            const BoxStats b = r.box.value_or(BoxStats{});
            out << '\t' << fmt_double(b.min) << '\t' << fmt_double(b.q1) << '\t' << fmt_double(b.median) << '\t'
                << fmt_double(b.q3) << '\t' << fmt_double(b.max);
        }
        out << '\n';
    }
}

// ─── click curves and session measures ──────────────────────────────────────

// Mean per-impression click distribution over engaged impressions of panes with
// the given ambiguity class and answer count. Multi-click impressions split
// their unit mass equally over the clicked positions.
inline std::vector<double> conditional_click_by_position(std::span<const ImpressionRecord> log,
                                                         std::span<const ClarificationPane> panes,
                                                         std::span<const Query> queries, AmbiguityClass cls,
                                                         int answer_count, std::int64_t min_impressions = 10) {
    std::map<std::string, AmbiguityClass> class_of;
    for (const auto& q : queries) class_of[q.id] = q.ambiguity_class;
    const auto stats = accumulate_stats(log, panes);
    std::set<std::string> matching;
    for (const auto& p : panes) {
        auto it = class_of.find(p.query_id);
        if (it != class_of.end() && it->second == cls && p.answer_count() == answer_count &&
            stats.at(p.id).impressions >= min_impressions)
            matching.insert(p.id);
    }
    if (matching.empty()) throw InputError("no panes match the requested class and answer count");
    std::vector<double> sum(static_cast<std::size_t>(answer_count), 0.0);
    std::int64_t engaged = 0;
    for (const auto& imp : log) {
        if (imp.answer_clicks.empty() || !matching.count(imp.pane_id)) continue;
        ++engaged;
        const double share = 1.0 / static_cast<double>(imp.answer_clicks.size());
        for (int pos : imp.answer_clicks) sum[static_cast<std::size_t>(pos - 1)] += share;
    }
    if (engaged == 0) return std::vector<double>(sum.size(), 1.0 / static_cast<double>(sum.size()));
    for (auto& x : sum) x /= static_cast<double>(engaged);
    return sum;
}

inline bool is_dissatisfied(const ImpressionRecord& r, double dwell_threshold_s, double reformulation_window_s) {
    for (const auto& c : r.result_clicks)
        if (c.dwell_seconds < dwell_threshold_s) return true;
    return r.reformulation && r.reformulation->delta_seconds <= reformulation_window_s;
}

// Fraction of impressions with a short-dwell result click or a quick reformulation.
inline double dissatisfaction_rate(std::span<const ImpressionRecord> log, double dwell_threshold_s,
                                   double reformulation_window_s = 300.0) {
    if (!(dwell_threshold_s > 0) || !(reformulation_window_s > 0)) throw InputError("thresholds must be > 0");
    if (log.empty()) return 0.0;
    std::int64_t bad = 0;
    for (const auto& r : log) bad += is_dissatisfied(r, dwell_threshold_s, reformulation_window_s) ? 1 : 0;
    return static_cast<double>(bad) / static_cast<double>(log.size());
}

// Among engaged impressions, the fraction with two or more answer clicks.
inline double multi_click_rate(std::span<const ImpressionRecord> log) {
    std::int64_t engaged = 0, multi = 0;
    for (const auto& r : log) {
        if (r.answer_clicks.empty()) continue;
        ++engaged;
        if (r.answer_clicks.size() >= 2) ++multi;
    }
    if (engaged == 0) throw std::domain_error("multi_click_rate: no engaged impressions");
    return static_cast<double>(multi) / static_cast<double>(engaged);
}

// Fleiss' kappa for an items x categories count matrix.
inline double fleiss_kappa(const std::vector<std::vector<std::int64_t>>& ratings, std::int64_t raters_per_item) {
    if (ratings.empty()) throw InputError("fleiss_kappa: no items");
    if (raters_per_item < 2) throw InputError("fleiss_kappa: need at least 2 raters per item");
    const std::size_t cats = ratings.front().size();
    const auto n = static_cast<double>(raters_per_item);
    const auto items = static_cast<double>(ratings.size());
    std::vector<double> col(cats, 0.0);
    double p_bar = 0.0;
    for (std::size_t i = 0; i < ratings.size(); ++i) {
        const auto& row = ratings[i];
        if (row.size() != cats) throw InputError("fleiss_kappa: ragged rating matrix");
        std::int64_t sum = 0;
        double sq = 0.0;
        for (std::size_t j = 0; j < cats; ++j) {
            if (row[j] < 0) throw InputError("fleiss_kappa: negative count");
            sum += row[j];
            sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            col[j] += static_cast<double>(row[j]);
        }
        if (sum != raters_per_item)
            throw InputError("fleiss_kappa: row " + std::to_string(i) + " sums to " + std::to_string(sum));
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= items;
    double p_e = 0.0;
    for (double c : col) {
        const double pj = c / (items * n);
        p_e += pj * pj;
    }
    if (p_bar >= 1.0) return 1.0;  // perfect agreement, including the single-category case
    return (p_bar - p_e) / (1.0 - p_e);
}

// Share of Good / Fair / Bad among overall labels and among landing labels.
struct LabelDistribution {
    std::array<double, 3> overall{};  // indexed by Grade
    std::array<double, 3> landing{};
};

inline LabelDistribution label_distribution(std::span<const PaneLabels> labels) {
    LabelDistribution d;
    double n_overall = 0, n_landing = 0;
    for (const auto& l : labels) {
        d.overall[static_cast<std::size_t>(l.overall)] += 1;
        n_overall += 1;
        for (auto g : l.landing) {
            d.landing[static_cast<std::size_t>(g)] += 1;
            n_landing += 1;
        }
    }
    if (n_overall > 0)
        for (auto& x : d.overall) x /= n_overall;
    if (n_landing > 0)
        for (auto& x : d.landing) x /= n_landing;
    return d;
}

}  // namespace clarify
