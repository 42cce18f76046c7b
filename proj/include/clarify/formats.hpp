#pragma once
// Readers and writers for the on-disk corpus: tab-delimited logs and tables,
// plus JSON-lines records for intent sets, per-pane stats and ground truth.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "core.hpp"
#include "intents.hpp"
#include "io.hpp"
#include "synthlog.hpp"

namespace clarify {

namespace fs = std::filesystem;

// ─── tab-delimited tables ───────────────────────────────────────────────────

inline void write_reformulations(const fs::path& path, const std::vector<ReformulationRecord>& rows) {
    auto out = open_output(path);
    out << "# query\tnew_query\tfreq\n";
    for (const auto& r : rows) out << r.query << '\t' << r.new_query << '\t' << r.freq << '\n';
}

inline std::vector<ReformulationRecord> read_reformulations(const fs::path& path) {
    std::vector<ReformulationRecord> out;
    for (const auto& row : read_tsv(path, 3)) {
        const auto freq = parse_count(row.fields[2], path, row.line);
        if (freq < 1) throw InputError(path.string() + ":" + std::to_string(row.line) + ": frequency must be >= 1");
        out.push_back({row.fields[0], row.fields[1], freq});
    }
    return out;
}

inline void write_click_titles(const fs::path& path, const std::vector<ClickTitleRecord>& rows) {
    auto out = open_output(path);
    out << "# query\turl\ttitle\tfreq\n";
    for (const auto& r : rows) out << r.query << '\t' << r.url << '\t' << r.title << '\t' << r.freq << '\n';
}

inline std::vector<ClickTitleRecord> read_click_titles(const fs::path& path) {
    std::vector<ClickTitleRecord> out;
    for (const auto& row : read_tsv(path, 4)) {
        const auto freq = parse_count(row.fields[3], path, row.line);
        if (freq < 1) throw InputError(path.string() + ":" + std::to_string(row.line) + ": frequency must be >= 1");
        out.push_back({row.fields[0], row.fields[1], row.fields[2], freq});
    }
    return out;
}

inline void write_lexicon(const fs::path& path, const EntityLexicon& lexicon) {
    auto out = open_output(path);
    out << "# answer\tentity_type\n";
    for (const auto& [text, type] : lexicon) out << text << '\t' << type << '\n';
}

inline EntityLexicon read_lexicon(const fs::path& path) {
    EntityLexicon out;
    for (const auto& row : read_tsv(path, 2)) {
        if (!out.emplace(join(tokenize(row.fields[0])), row.fields[1]).second)
            throw InputError(path.string() + ":" + std::to_string(row.line) + ": duplicate answer '" + row.fields[0] + "'");
    }
    return out;
}

inline void write_swaps(const fs::path& path, const std::vector<SwapPair>& rows) {
    auto out = open_output(path);
    out << "# query_id\tpane_c\tpane_c_prime\tswap_index\n";
    for (const auto& r : rows) out << r.query_id << '\t' << r.pane_c << '\t' << r.pane_c_prime << '\t' << r.swap_index << '\n';
}

inline std::vector<SwapPair> read_swaps(const fs::path& path) {
    std::vector<SwapPair> out;
    for (const auto& row : read_tsv(path, 4)) {
        const auto i = parse_count(row.fields[3], path, row.line);
        if (i < 1 || i >= kMaxAnswers) throw InputError(path.string() + ":" + std::to_string(row.line) + ": bad swap index");
        out.push_back({row.fields[0], row.fields[1], row.fields[2], static_cast<int>(i)});
    }
    return out;
}

// ─── JSON-lines records ─────────────────────────────────────────────────────

inline void to_json(Json& j, const IntentItem& i) { j = Json{{"text", i.text}, {"weight", i.weight}}; }

inline void from_json(const Json& j, IntentItem& i) {
    j.at("text").get_to(i.text);
    j.at("weight").get_to(i.weight);
    if (!(i.weight >= 0.0)) throw InputError("intent weight must be >= 0");
}

inline void to_json(Json& j, const IntentSet& s) {
    j = Json{{"query_id", s.query_id}, {"source", to_string(s.source)}, {"items", s.items}};
}

inline void from_json(const Json& j, IntentSet& s) {
    j.at("query_id").get_to(s.query_id);
    s.source = parse_intent_source(j.at("source").get<std::string>());
    j.at("items").get_to(s.items);
}

// Per-pane aggregate stats, keyed by pane id.
struct PaneStatsRecord {
    std::string pane_id;
    EngagementStats stats;
};

inline void to_json(Json& j, const PaneStatsRecord& r) {
    j = Json(r.stats);
    j["pane_id"] = r.pane_id;
}

inline void from_json(const Json& j, PaneStatsRecord& r) {
    j.at("pane_id").get_to(r.pane_id);
    r.stats = j.get<EngagementStats>();
}

inline void write_stats(const fs::path& path, const StatsByPane& stats) {
    std::vector<PaneStatsRecord> rows;
    for (const auto& [id, s] : stats) rows.push_back({id, s});
    write_jsonl(path, rows);
}

inline StatsByPane read_stats(const fs::path& path) {
    StatsByPane out;
    for (auto& r : read_jsonl<PaneStatsRecord>(path)) out[r.pane_id] = std::move(r.stats);
    return out;
}

// Generator ground truth for one pane.
struct PaneTruth {
    std::string pane_id;
    double engagement = 0.0;
    std::vector<double> relevance;
};

inline void to_json(Json& j, const PaneTruth& t) {
    j = Json{{"pane_id", t.pane_id}, {"engagement", t.engagement}, {"relevance", t.relevance}};
}

inline void from_json(const Json& j, PaneTruth& t) {
    j.at("pane_id").get_to(t.pane_id);
    j.at("engagement").get_to(t.engagement);
    j.at("relevance").get_to(t.relevance);
}

}  // namespace clarify
