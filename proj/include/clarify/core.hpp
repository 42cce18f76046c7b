#pragma once
// Domain types shared by every module, plus elementary engagement statistics.
//
// Everything here is an immutable value type once built; operations are pure.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clarify {

// Malformed input data or configuration (CLI exit code 1).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Optimizer failed to converge or produced non-finite values (CLI exit code 2).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Tokens = std::vector<std::string>;

inline constexpr int kMinAnswers = 2;
inline constexpr int kMaxAnswers = 5;

enum class AmbiguityClass { ambiguous, faceted, unknown };
enum class TrafficClass { head, torso, tail, unknown };
enum class Template { T1, T2, T3, T4, T5, T6, T7, other };
enum class Grade { Bad = 0, Fair = 1, Good = 2 };

inline constexpr std::array<Template, 8> kAllTemplates = {
    Template::T1, Template::T2, Template::T3, Template::T4,
    Template::T5, Template::T6, Template::T7, Template::other};

struct Query {
    std::string id;
    Tokens text;
    bool is_question = false;
    AmbiguityClass ambiguity_class = AmbiguityClass::unknown;
    TrafficClass traffic_class = TrafficClass::unknown;
};

struct CandidateAnswer {
    Tokens text;
    std::optional<std::string> entity_type;
    double render_size = 1.0;  // abstract display width; character count by default
    int position = 1;          // 1-based
};

struct ClarificationPane {
    std::string id;
    std::string query_id;
    Tokens question_text;
    Template template_id = Template::other;
    std::vector<CandidateAnswer> answers;

    int answer_count() const { return static_cast<int>(answers.size()); }
};

struct ResultClick {
    std::string url;
    double dwell_seconds = 0.0;
};

struct Reformulation {
    Tokens new_query_text;
    double delta_seconds = 0.0;
};

struct ImpressionRecord {
    std::string pane_id;
    std::int64_t timestamp = 0;
    std::vector<int> answer_clicks;  // sorted, unique, 1-based positions
    std::vector<ResultClick> result_clicks;
    std::optional<Reformulation> reformulation;
};

struct EngagementStats {
    std::int64_t impressions = 0;
    std::int64_t engaged_impressions = 0;  // impressions with >= 1 answer click
    std::vector<std::int64_t> per_position_clicks;
};

struct PaneLabels {
    std::string pane_id;
    Grade overall = Grade::Fair;
    std::vector<Grade> landing;  // one per answer
};

// ─── enum names ──────────────────────────────────────────────────────────────

inline std::string_view to_string(AmbiguityClass c) {
    switch (c) {
        case AmbiguityClass::ambiguous: return "ambiguous";
        case AmbiguityClass::faceted: return "faceted";
        case AmbiguityClass::unknown: return "unknown";
    }
    return "unknown";
}

inline std::string_view to_string(TrafficClass c) {
    switch (c) {
        case TrafficClass::head: return "head";
        case TrafficClass::torso: return "torso";
        case TrafficClass::tail: return "tail";
        case TrafficClass::unknown: return "unknown";
    }
    return "unknown";
}

inline std::string_view to_string(Template t) {
    static constexpr std::array<std::string_view, 8> names = {"T1", "T2", "T3", "T4",
                                                              "T5", "T6", "T7", "other"};
    return names[static_cast<std::size_t>(t)];
}

inline std::string_view to_string(Grade g) {
    switch (g) {
        case Grade::Bad: return "Bad";
        case Grade::Fair: return "Fair";
        case Grade::Good: return "Good";
    }
    return "Bad";
}

inline AmbiguityClass parse_ambiguity(std::string_view s) {
    if (s == "ambiguous") return AmbiguityClass::ambiguous;
    if (s == "faceted") return AmbiguityClass::faceted;
    if (s == "unknown") return AmbiguityClass::unknown;
    throw InputError("unknown ambiguity_class '" + std::string(s) + "'");
}

inline TrafficClass parse_traffic(std::string_view s) {
    if (s == "head") return TrafficClass::head;
    if (s == "torso") return TrafficClass::torso;
    if (s == "tail") return TrafficClass::tail;
    if (s == "unknown") return TrafficClass::unknown;
    throw InputError("unknown traffic_class '" + std::string(s) + "'");
}

inline Template parse_template(std::string_view s) {
    for (auto t : kAllTemplates)
        if (to_string(t) == s) return t;
    throw InputError("unknown template_id '" + std::string(s) + "'");
}

inline Grade parse_grade(std::string_view s) {
    if (s == "Good") return Grade::Good;
    if (s == "Fair") return Grade::Fair;
    if (s == "Bad") return Grade::Bad;
    throw InputError("unknown label '" + std::string(s) + "'");
}

// ─── text ────────────────────────────────────────────────────────────────────

// Lowercases and splits on whitespace and ASCII punctuation. Punctuation is dropped.
inline Tokens tokenize(std::string_view text) {
    Tokens out;
    std::string cur;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c) || std::ispunct(c)) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join(const Tokens& tokens, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += sep;
        out += tokens[i];
    }
    return out;
}

// Token-level contiguous containment: needle occurs as a run inside hay.
inline bool contains_run(const Tokens& hay, const Tokens& needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

// Template taxonomy: seven fixed question patterns with a blank slot, matched
// case-insensitively on the tokenized question; anything else is `other`.
inline Template classify_template(const Tokens& question) {
    static const std::vector<std::pair<Template, std::regex>> patterns = [] {
        auto re = [](const char* p) { return std::regex(p, std::regex::ECMAScript); };
        return std::vector<std::pair<Template, std::regex>>{
            {Template::T5, re("^who are you shopping for$")},
            {Template::T6, re("^what are you trying to do$")},
            {Template::T1, re("^what (would you like|do you want) to know about .+$")},
            {Template::T4, re("^what (would you like|do you want) to do with .+$")},
            {Template::T7, re("^do you have .+ in mind$")},
            {Template::T2, re("^(which|what) .+ do you mean$")},
            {Template::T3, re("^(which|what) .+ are you looking for$")},
        };
    }();
    Tokens lowered;
    for (const auto& t : question) {
        auto part = tokenize(t);
        lowered.insert(lowered.end(), part.begin(), part.end());
    }
    const std::string text = join(lowered);
    for (const auto& [tpl, re] : patterns)
        if (std::regex_match(text, re)) return tpl;
    return Template::other;
}

// ─── engagement statistics ──────────────────────────────────────────────────

inline double engagement_rate(const EngagementStats& stats) {
    if (stats.impressions <= 0) throw std::domain_error("engagement_rate: zero impressions");
    return static_cast<double>(stats.engaged_impressions) / static_cast<double>(stats.impressions);
}

// Distribution of clicks over positions; uniform when nothing was clicked.
inline std::vector<double> conditional_click_distribution(const EngagementStats& stats) {
    const auto& clicks = stats.per_position_clicks;
    std::vector<double> out(clicks.size(), 0.0);
    if (clicks.empty()) return out;
    std::int64_t total = 0;
    for (auto c : clicks) total += c;
    if (total == 0) {
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(clicks.size()));
        return out;
    }
    for (std::size_t i = 0; i < clicks.size(); ++i)
        out[i] = static_cast<double>(clicks[i]) / static_cast<double>(total);
    return out;
}

// Laplace-smoothed click rate (clicks + 1) / (impressions + 2), always inside (0, 1).
inline double smoothed_rate(std::int64_t clicks, std::int64_t impressions) {
    return (static_cast<double>(clicks) + 1.0) / (static_cast<double>(impressions) + 2.0);
}

inline std::vector<double> smoothed_position_rates(const EngagementStats& stats) {
    std::vector<double> out;
    out.reserve(stats.per_position_clicks.size());
    for (auto c : stats.per_position_clicks) out.push_back(smoothed_rate(c, stats.impressions));
    return out;
}

using StatsByPane = std::map<std::string, EngagementStats>;

// url -> click count for one query; keyed by query id across a log.
using UrlClicks = std::map<std::string, std::int64_t>;
using HistoricalClicks = std::map<std::string, UrlClicks>;
using EntityLexicon = std::map<std::string, std::string>;  // answer text -> entity type

// Folds an impression log into per-pane statistics. Impressions referencing an
// unknown pane, or clicking a position the pane does not have, are input errors.
inline StatsByPane accumulate_stats(std::span<const ImpressionRecord> log,
                                    std::span<const ClarificationPane> panes) {
    StatsByPane out;
    std::unordered_map<std::string, int> sizes;
    for (const auto& p : panes) {
        sizes[p.id] = p.answer_count();
        auto& s = out[p.id];
        s.per_position_clicks.assign(static_cast<std::size_t>(p.answer_count()), 0);
    }
    for (const auto& imp : log) {
        auto it = sizes.find(imp.pane_id);
        if (it == sizes.end()) throw InputError("impression references unknown pane '" + imp.pane_id + "'");
        auto& s = out[imp.pane_id];
        ++s.impressions;
        if (!imp.answer_clicks.empty()) ++s.engaged_impressions;
        for (int pos : imp.answer_clicks) {
            if (pos < 1 || pos > it->second)
                throw InputError("impression for pane '" + imp.pane_id + "' clicks position " +
                                 std::to_string(pos));
            ++s.per_position_clicks[static_cast<std::size_t>(pos - 1)];
        }
    }
    return out;
}

// ─── validation ─────────────────────────────────────────────────────────────

struct Violation {
    std::string kind;  // "answer count", "contiguity", "empty text", "render size"
    std::string detail;
};

inline std::vector<Violation> validate_pane(const ClarificationPane& pane) {
    std::vector<Violation> out;
    const int k = pane.answer_count();
    if (k < kMinAnswers || k > kMaxAnswers)
        out.push_back({"answer count", "pane " + pane.id + " has " + std::to_string(k) + " answers"});
    for (int i = 0; i < k; ++i) {
        if (pane.answers[static_cast<std::size_t>(i)].position != i + 1) {
            out.push_back({"contiguity", "pane " + pane.id + " answer " + std::to_string(i + 1) +
                                             " has position " +
                                             std::to_string(pane.answers[static_cast<std::size_t>(i)].position)});
            break;
        }
    }
    if (pane.question_text.empty()) out.push_back({"empty text", "pane " + pane.id + " has no question"});
    for (const auto& a : pane.answers) {
        if (a.text.empty())
            out.push_back({"empty text", "pane " + pane.id + " answer at " + std::to_string(a.position)});
        if (!(a.render_size > 0.0) || !std::isfinite(a.render_size))
            out.push_back({"render size", "pane " + pane.id + " answer at " + std::to_string(a.position)});
    }
    return out;
}

inline void validate_query(const Query& q) {
    if (q.text.empty()) throw InputError("query '" + q.id + "' has empty text");
}

// Clarification panes with their answers reordered; used for swap variants.
inline ClarificationPane with_adjacent_swap(ClarificationPane pane, int swap_index, std::string new_id) {
    const int i = swap_index;
    if (i < 1 || i >= pane.answer_count())
        throw InputError("swap index " + std::to_string(i) + " out of range for pane " + pane.id);
    std::swap(pane.answers[static_cast<std::size_t>(i - 1)], pane.answers[static_cast<std::size_t>(i)]);
    for (int k = 0; k < pane.answer_count(); ++k) pane.answers[static_cast<std::size_t>(k)].position = k + 1;
    pane.id = std::move(new_id);
    return pane;
}

inline double default_render_size(const Tokens& text) { return static_cast<double>(join(text).size()); }

}  // namespace clarify
