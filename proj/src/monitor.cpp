#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

#include "efield/geometry.hpp"

namespace efield {

using json = nlohmann::json;

std::optional<MuKAlert> evaluate_record(const KeyNormRecord& record, double threshold) {
    const double mu = static_cast<double>(record.length) * record.max_row_norm_sq / record.frob_sq;
    if (mu > threshold)
        return MuKAlert{record.head_id, mu, record.step};
    return std::nullopt;
}

std::optional<KeyNormRecord> parse_key_norm_record(std::string_view line, std::string& error) {
    const json doc = json::parse(line.begin(), line.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        error = "not a JSON object";
        return std::nullopt;
    }
    KeyNormRecord r;
    const auto head = doc.find("head_id");
    if (head == doc.end() || !head->is_string()) {
        error = "missing string field 'head_id'";
        return std::nullopt;
    }
    r.head_id = head->get<std::string>();

    const auto step = doc.find("step");
    if (step == doc.end() || !step->is_number_integer()) {
        error = "missing integer field 'step'";
        return std::nullopt;
    }
    r.step = step->get<std::int64_t>();

    const auto length = doc.find("L");
    if (length == doc.end() || !length->is_number_integer() || length->get<std::int64_t>() < 1) {
        error = "field 'L' must be a positive integer";
        return std::nullopt;
    }
    r.length = length->get<std::uint64_t>();

    const auto max_sq = doc.find("max_row_norm_sq");
    const auto frob = doc.find("frob_sq");
    if (max_sq == doc.end() || !max_sq->is_number() || frob == doc.end() || !frob->is_number()) {
        error = "missing numeric fields 'max_row_norm_sq' / 'frob_sq'";
        return std::nullopt;
    }
    r.max_row_norm_sq = max_sq->get<double>();
    r.frob_sq = frob->get<double>();
    if (!(r.frob_sq > 0.0) || !(r.max_row_norm_sq >= 0.0) || !std::isfinite(r.frob_sq)) {
        error = "frob_sq must be positive and max_row_norm_sq non-negative";
        return std::nullopt;
    }
    if (r.max_row_norm_sq > r.frob_sq * (1.0 + 1e-12)) {
        error = "max_row_norm_sq exceeds frob_sq";
        return std::nullopt;
    }
    return r;
}

std::string alert_to_json(const MuKAlert& alert) {
    json doc;
    doc["head_id"] = alert.head_id;
    doc["mu_K"] = alert.mu_k;
    doc["step"] = alert.step;
    return doc.dump();
}

MonitorStats monitor_mu_k(std::istream& in, std::ostream& out, std::ostream& warn, double threshold) {
    MonitorStats stats;
    std::string line;
    std::string error;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto record = parse_key_norm_record(line, error);
        if (!record) {
            ++stats.skipped;
            warn << fmt::format("warning: line {}: skipped malformed record: {}\n", line_no, error);
            continue;
        }
        ++stats.records;
        if (const auto alert = evaluate_record(*record, threshold)) {
            ++stats.alerts;
            out << alert_to_json(*alert) << '\n';
        }
    }
    out.flush();
    return stats;
}

} // namespace efield
