#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace usdrl::report {

using json = nlohmann::json;

struct RunReport {
    std::string command;
    std::string config_digest;
    std::uint64_t seed = 0;
    double wall_time_s = 0;
    json metrics = json::object();
    json artifacts = json::object();  // name -> path
};

inline bool all_numbers_finite(const json& j) {
    if (j.is_number_float()) return std::isfinite(j.get<double>());
    if (j.is_object() || j.is_array()) {
        for (const auto& v : j)
            if (!all_numbers_finite(v)) return false;
    }
    return true;
}

inline json to_json(const RunReport& r) {
    return {{"command", r.command},
            {"config_digest", r.config_digest},
            {"seed", r.seed},
            {"wall_time_s", r.wall_time_s},
            {"metrics", r.metrics},
            {"artifacts", r.artifacts}};
}

/// Writes the report; returns false when any metric is non-finite (the CLI
/// maps that to a nonzero exit code).
inline bool write_report(const std::string& path, const RunReport& r) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report '" + path + "'");
    out << to_json(r).dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed for report '" + path + "'");
    return all_numbers_finite(r.metrics);
}

}  // namespace usdrl::report
