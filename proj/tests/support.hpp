#pragma once
// Small builders shared by the test binaries.

#include <string>
#include <vector>

#include "clarify/core.hpp"

namespace support {

inline clarify::ClarificationPane pane(const std::string& id, const std::string& query_id,
                                       const std::vector<std::string>& answers,
                                       const std::string& question = "which one do you mean") {
    clarify::ClarificationPane p;
    p.id = id;
    p.query_id = query_id;
    p.question_text = clarify::tokenize(question);
    p.template_id = clarify::classify_template(p.question_text);
    int pos = 1;
    for (const auto& a : answers) {
        clarify::CandidateAnswer c;
        c.text = clarify::tokenize(a);
        c.render_size = clarify::default_render_size(c.text);
        c.position = pos++;
        p.answers.push_back(std::move(c));
    }
    return p;
}

inline clarify::Query query(const std::string& id, const std::string& text,
                            clarify::AmbiguityClass cls = clarify::AmbiguityClass::faceted) {
    clarify::Query q;
    q.id = id;
    q.text = clarify::tokenize(text);
    q.ambiguity_class = cls;
    q.traffic_class = clarify::TrafficClass::torso;
    return q;
}

inline clarify::ImpressionRecord impression(const std::string& pane_id, std::vector<int> clicks) {
    clarify::ImpressionRecord r;
    r.pane_id = pane_id;
    r.answer_clicks = std::move(clicks);
    return r;
}

}  // namespace support
