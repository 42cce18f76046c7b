#pragma once
// Weighted intent sets mined from query reformulations and clicked-URL titles.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "core.hpp"

namespace clarify {

enum class IntentSource { reformulation, click_title };

inline std::string_view to_string(IntentSource s) {
    return s == IntentSource::reformulation ? "reformulation" : "click_title";
}

inline IntentSource parse_intent_source(std::string_view s) {
    if (s == "reformulation") return IntentSource::reformulation;
    if (s == "click_title") return IntentSource::click_title;
    throw InputError("unknown intent source '" + std::string(s) + "'");
}

struct IntentItem {
    std::string text;  // normalized, space-joined tokens
    double weight = 0.0;

    bool operator==(const IntentItem&) const = default;
};

struct IntentSet {
    std::string query_id;
    IntentSource source = IntentSource::reformulation;
    std::vector<IntentItem> items;  // weight desc, then text asc
};

// (q, q', w): q was reformulated into q' w times.
struct ReformulationRecord {
    std::string query;
    std::string new_query;
    long long freq = 1;
};

// (q, url, title, freq): url with the given title was clicked freq times for q.
struct ClickTitleRecord {
    std::string query;
    std::string url;
    std::string title;
    long long freq = 1;
};

inline constexpr int kDefaultMinFreq = 2;
inline constexpr int kDefaultMaxIntents = 8;

// Lowercase, collapse whitespace, drop a trailing " - Site" / " | Site" suffix.
inline std::string normalize_title(std::string_view title) {
    std::string lowered;
    for (char c : title) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    std::size_t cut = std::string::npos;
    for (std::string_view sep : {" - ", " | "}) {
        auto pos = lowered.rfind(sep);
        if (pos != std::string::npos && (cut == std::string::npos || pos > cut)) cut = pos;
    }
    if (cut != std::string::npos && cut > 0) {
        auto head = tokenize(lowered.substr(0, cut));
        if (!head.empty()) return join(head);
    }
    return join(tokenize(lowered));
}

namespace detail {

inline void sort_items(std::vector<IntentItem>& items) {
    std::sort(items.begin(), items.end(), [](const IntentItem& a, const IntentItem& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.text < b.text;
    });
}

// query text -> (intent text -> weight), emitted as sets ordered by query text.
inline std::vector<IntentSet> emit_sets(const std::map<std::string, std::map<std::string, double>>& acc,
                                        IntentSource source, double min_freq) {
    std::vector<IntentSet> out;
    for (const auto& [q, intents] : acc) {
        IntentSet set{q, source, {}};
        for (const auto& [text, w] : intents)
            if (w >= min_freq) set.items.push_back({text, w});
        if (set.items.empty()) continue;
        sort_items(set.items);
        out.push_back(std::move(set));
    }
    return out;
}

}  // namespace detail

// Sets are keyed by the normalized query text; see assign_query_ids.
inline std::vector<IntentSet> intents_from_reformulations(const std::vector<ReformulationRecord>& records,
                                                          int min_freq = kDefaultMinFreq) {
    std::map<std::string, std::map<std::string, double>> acc;
    for (const auto& r : records) {
        if (r.freq < 1) throw InputError("reformulation frequency must be >= 1");
        const auto q = tokenize(r.query);
        const auto qp = tokenize(r.new_query);
        if (q.empty() || qp == q || !contains_run(qp, q)) continue;
        acc[join(q)][join(qp)] += static_cast<double>(r.freq);
    }
    return detail::emit_sets(acc, IntentSource::reformulation, min_freq);
}

inline std::vector<IntentSet> intents_from_click_titles(const std::vector<ClickTitleRecord>& records,
                                                        int min_freq = kDefaultMinFreq) {
    std::map<std::string, std::map<std::string, double>> acc;
    for (const auto& r : records) {
        if (r.freq < 1) throw InputError("click frequency must be >= 1");
        const auto q = tokenize(r.query);
        auto title = normalize_title(r.title);
        if (q.empty() || title.empty()) continue;
        acc[join(q)][title] += static_cast<double>(r.freq);
    }
    return detail::emit_sets(acc, IntentSource::click_title, min_freq);
}

inline IntentSet truncate_intents(IntentSet set, int n_max = kDefaultMaxIntents) {
    if (n_max < 1) throw InputError("n_max must be >= 1");
    detail::sort_items(set.items);
    if (set.items.size() > static_cast<std::size_t>(n_max)) set.items.resize(static_cast<std::size_t>(n_max));
    return set;
}

// Re-keys sets from query text to query id; sets for unknown queries are dropped.
inline std::vector<IntentSet> assign_query_ids(std::vector<IntentSet> sets, const std::vector<Query>& queries) {
    std::map<std::string, std::string> by_text;
    for (const auto& q : queries) by_text.emplace(join(q.text), q.id);
    std::vector<IntentSet> out;
    for (auto& s : sets) {
        auto it = by_text.find(s.query_id);
        if (it == by_text.end()) continue;
        s.query_id = it->second;
        out.push_back(std::move(s));
    }
    return out;
}

// Historical URL clicks per query id, aggregated from click-title records.
inline HistoricalClicks historical_clicks_from_titles(const std::vector<ClickTitleRecord>& records,
                                                      const std::vector<Query>& queries) {
    std::map<std::string, std::string> by_text;
    for (const auto& q : queries) by_text.emplace(join(q.text), q.id);
    HistoricalClicks out;
    for (const auto& r : records) {
        auto it = by_text.find(join(tokenize(r.query)));
        if (it == by_text.end()) continue;
        out[it->second][r.url] += r.freq;
    }
    return out;
}

// Intent sets for one query, one per source, as RLC consumes them.
struct QueryIntents {
    IntentSet reformulation;
    IntentSet click_title;
};

inline std::map<std::string, QueryIntents> group_intents(const std::vector<IntentSet>& sets) {
    std::map<std::string, QueryIntents> out;
    for (const auto& s : sets) {
        auto& slot = out[s.query_id];
        (s.source == IntentSource::reformulation ? slot.reformulation : slot.click_title) = s;
    }
    for (auto& [id, qi] : out) {
        qi.reformulation.query_id = id;
        qi.reformulation.source = IntentSource::reformulation;
        qi.click_title.query_id = id;
        qi.click_title.source = IntentSource::click_title;
    }
    return out;
}

}  // namespace clarify
