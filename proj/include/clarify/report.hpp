#pragma once
// Named tables of plain values. Every command stores its tables in report.json
// and writes each one as <name>.tsv; plot-data regenerates the TSVs from JSON.

#include <cmath>
#include <deque>
#include <ostream>
#include <string>
#include <vector>

#include "io.hpp"

namespace clarify {

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<Json>> rows;  // each cell a string, integer or real

    Table& add(std::vector<Json> row) {
        if (row.size() != columns.size())
            throw InputError("table " + name + ": row has " + std::to_string(row.size()) + " cells, expected " +
                             std::to_string(columns.size()));
        rows.push_back(std::move(row));
        return *this;
    }
};

inline std::string format_cell(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_number_float()) return fmt_double(v.get<double>());
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_null()) return "NA";
    throw InputError("table cell must be a scalar");
}

inline void write_table_tsv(std::ostream& os, const Table& t) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) os << (c ? "\t" : "") << t.columns[c];
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "\t" : "") << format_cell(row[c]);
        os << '\n';
    }
}

// Non-finite reals become null, since JSON has no NaN.
inline Json cell(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline void to_json(Json& j, const Table& t) { j = Json{{"name", t.name}, {"columns", t.columns}, {"rows", t.rows}}; }

inline void from_json(const Json& j, Table& t) {
    j.at("name").get_to(t.name);
    j.at("columns").get_to(t.columns);
    t.rows.clear();
    if (t.name.empty() || t.name.find_first_of("/\\") != std::string::npos || t.name[0] == '.')
        throw InputError("bad table name '" + t.name + "'");
    for (const auto& r : j.at("rows")) {
        if (!r.is_array()) throw InputError("table " + t.name + ": row is not an array");
        t.add(r.get<std::vector<Json>>());
    }
}

struct Report {
    std::string command;
    Json values = Json::object();  // scalar results
    std::deque<Table> tables;  // table() references stay valid as more are added

    Table& table(std::string name, std::vector<std::string> columns) {
        tables.push_back({std::move(name), std::move(columns), {}});
        return tables.back();
    }
};

inline void to_json(Json& j, const Report& r) {
    j = Json{{"format", "clarify-report"}, {"version", 1}, {"command", r.command}, {"values", r.values},
             {"tables", r.tables}};
}

inline void from_json(const Json& j, Report& r) {
    if (j.value("format", std::string()) != "clarify-report") throw InputError("not a clarify report");
    if (j.value("version", 0) != 1) throw InputError("unsupported report version");
    j.at("command").get_to(r.command);
    r.values = j.value("values", Json::object());
    j.at("tables").get_to(r.tables);
}

}  // namespace clarify
