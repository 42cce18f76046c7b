#pragma once
// Line-delimited JSON records for the domain types, plus the tab-delimited
// inputs. Field names match the C++ member names one-for-one.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace clarify {

using Json = nlohmann::json;

// ─── JSON mapping ───────────────────────────────────────────────────────────

inline void to_json(Json& j, const Query& q) {
    j = Json{{"id", q.id},
             {"text", q.text},
             {"is_question", q.is_question},
             {"ambiguity_class", to_string(q.ambiguity_class)},
             {"traffic_class", to_string(q.traffic_class)}};
}

inline void from_json(const Json& j, Query& q) {
    j.at("id").get_to(q.id);
    j.at("text").get_to(q.text);
    q.is_question = j.value("is_question", false);
    q.ambiguity_class = parse_ambiguity(j.value("ambiguity_class", std::string("unknown")));
    q.traffic_class = parse_traffic(j.value("traffic_class", std::string("unknown")));
    validate_query(q);
}

inline void to_json(Json& j, const CandidateAnswer& a) {
    j = Json{{"text", a.text}, {"render_size", a.render_size}, {"position", a.position}};
    j["entity_type"] = a.entity_type ? Json(*a.entity_type) : Json(nullptr);
}

inline void from_json(const Json& j, CandidateAnswer& a) {
    j.at("text").get_to(a.text);
    j.at("position").get_to(a.position);
    a.render_size = j.contains("render_size") ? j.at("render_size").get<double>() : default_render_size(a.text);
    if (j.contains("entity_type") && !j.at("entity_type").is_null())
        a.entity_type = j.at("entity_type").get<std::string>();
    else
        a.entity_type.reset();
}

inline void to_json(Json& j, const ClarificationPane& p) {
    j = Json{{"id", p.id},
             {"query_id", p.query_id},
             {"question_text", p.question_text},
             {"template_id", to_string(p.template_id)},
             {"answers", p.answers}};
}

inline void from_json(const Json& j, ClarificationPane& p) {
    j.at("id").get_to(p.id);
    j.at("query_id").get_to(p.query_id);
    j.at("question_text").get_to(p.question_text);
    p.template_id = j.contains("template_id") ? parse_template(j.at("template_id").get<std::string>())
                                              : classify_template(p.question_text);
    j.at("answers").get_to(p.answers);
    if (auto v = validate_pane(p); !v.empty()) throw InputError(v.front().kind + ": " + v.front().detail);
}

inline void to_json(Json& j, const ResultClick& r) { j = Json{{"url", r.url}, {"dwell_seconds", r.dwell_seconds}}; }

inline void from_json(const Json& j, ResultClick& r) {
    j.at("url").get_to(r.url);
    j.at("dwell_seconds").get_to(r.dwell_seconds);
    if (r.dwell_seconds < 0) throw InputError("negative dwell_seconds");
}

inline void to_json(Json& j, const Reformulation& r) {
    j = Json{{"new_query_text", r.new_query_text}, {"delta_seconds", r.delta_seconds}};
}

inline void from_json(const Json& j, Reformulation& r) {
    j.at("new_query_text").get_to(r.new_query_text);
    j.at("delta_seconds").get_to(r.delta_seconds);
    if (r.delta_seconds < 0) throw InputError("negative delta_seconds");
}

inline void to_json(Json& j, const ImpressionRecord& r) {
    j = Json{{"pane_id", r.pane_id},
             {"timestamp", r.timestamp},
             {"answer_clicks", r.answer_clicks},
             {"result_clicks", r.result_clicks}};
    j["reformulation"] = r.reformulation ? Json(*r.reformulation) : Json(nullptr);
}

inline void from_json(const Json& j, ImpressionRecord& r) {
    j.at("pane_id").get_to(r.pane_id);
    j.at("timestamp").get_to(r.timestamp);
    j.at("answer_clicks").get_to(r.answer_clicks);
    std::sort(r.answer_clicks.begin(), r.answer_clicks.end());
    r.answer_clicks.erase(std::unique(r.answer_clicks.begin(), r.answer_clicks.end()), r.answer_clicks.end());
    r.result_clicks = j.value("result_clicks", std::vector<ResultClick>{});
    if (j.contains("reformulation") && !j.at("reformulation").is_null())
        r.reformulation = j.at("reformulation").get<Reformulation>();
    else
        r.reformulation.reset();
}

inline void to_json(Json& j, const PaneLabels& l) {
    std::vector<std::string> landing;
    for (auto g : l.landing) landing.emplace_back(to_string(g));
    j = Json{{"pane_id", l.pane_id}, {"overall", to_string(l.overall)}, {"landing", landing}};
}

inline void from_json(const Json& j, PaneLabels& l) {
    j.at("pane_id").get_to(l.pane_id);
    l.overall = parse_grade(j.at("overall").get<std::string>());
    l.landing.clear();
    for (const auto& g : j.value("landing", std::vector<std::string>{})) l.landing.push_back(parse_grade(g));
}

inline void to_json(Json& j, const EngagementStats& s) {
    j = Json{{"impressions", s.impressions},
             {"engaged_impressions", s.engaged_impressions},
             {"per_position_clicks", s.per_position_clicks}};
}

inline void from_json(const Json& j, EngagementStats& s) {
    j.at("impressions").get_to(s.impressions);
    j.at("engaged_impressions").get_to(s.engaged_impressions);
    j.at("per_position_clicks").get_to(s.per_position_clicks);
}

// ─── files ──────────────────────────────────────────────────────────────────

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    return out;
}

// Reads one record per non-blank line; failures carry "file:line: reason".
template <class T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::vector<T> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(Json::parse(line).get<T>());
        } catch (const std::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

template <class T>
void write_jsonl(std::ostream& out, const std::vector<T>& records) {
    for (const auto& r : records) out << Json(r).dump() << '\n';
}

template <class T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& records) {
    auto out = open_output(path);
    write_jsonl(out, records);
}

struct TsvRow {
    std::size_t line = 0;  // 1-based line in the file
    std::vector<std::string> fields;
};

// Tab-delimited rows with a fixed column count; '#'-prefixed lines are comments.
inline std::vector<TsvRow> read_tsv(const std::filesystem::path& path, std::size_t columns) {
    auto in = open_input(path);
    std::vector<TsvRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (line.back() == '\t') fields.emplace_back();
        if (fields.size() != columns)
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(columns) + " tab-separated fields, got " +
                             std::to_string(fields.size()));
        rows.push_back({line_no, std::move(fields)});
    }
    return rows;
}

inline long long parse_count(const std::string& s, const std::filesystem::path& path, std::size_t line) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(line) + ": bad integer '" + s + "'");
    }
}

// Fixed-format decimal for delimited reports: 17 significant digits round-trips.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace clarify
