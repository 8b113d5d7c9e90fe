#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdelay/estimation.hpp"
#include "msdelay/oe.hpp"
#include "msdelay/reserve.hpp"

// JSON / CSV serialization of results. All numeric output is locale
// independent with '.' as the decimal separator (nlohmann/json and snprintf
// both guarantee that).

namespace msdelay {

inline nlohmann::json to_json(const FitResult& fit) {
    nlohmann::json j;
    j["method"] = fit.method;
    j["g"] = fit.g;
    j["f"] = fit.f;
    j["theta"] = fit.theta;
    j["objectives"] = {{"g", fit.g_objective}, {"f", fit.f_objective},
                       {"theta", fit.theta_objective}};
    j["converged"] = {{"g", fit.g_converged}, {"f", fit.f_converged},
                      {"theta", fit.theta_converged}};
    j["theta_iterations"] = fit.theta_iterations;
    j["warm_start"] = fit.warm_start;
    j["max_pending_mass"] = fit.max_pending_mass;
    auto flagged = nlohmann::json::array();
    for (const auto& tr : fit.flagged_adjudication) flagged.push_back({tr.first, tr.second});
    j["flagged_adjudication"] = flagged;
    return j;
}

inline nlohmann::json to_json(const BootstrapResult& boot) {
    nlohmann::json j;
    j["requested"] = boot.requested;
    j["seed"] = boot.seed;
    j["failures"] = boot.failures;
    j["failure_rate"] = boot.failure_rate();
    j["levels"] = boot.levels;
    auto intervals = nlohmann::json::array();
    for (std::size_t l = 0; l < boot.levels.size(); ++l) {
        auto per_coord = nlohmann::json::array();
        for (const auto& [lo, hi] : boot.intervals[l]) per_coord.push_back({lo, hi});
        intervals.push_back({{"level", boot.levels[l]}, {"theta", per_coord}});
    }
    j["percentile_intervals"] = intervals;
    return j;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

/// One row per resample: resample index then the theta coordinates.
inline void write_bootstrap_csv(const BootstrapResult& boot, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    const std::size_t dim = boot.theta_rows.empty() ? 0 : boot.theta_rows.front().size();
    os << "resample";
    for (std::size_t k = 0; k < dim; ++k) os << ",theta_" << (k + 1);
    os << "\n";
    for (std::size_t b = 0; b < boot.theta_rows.size(); ++b) {
        os << b;
        char buf[40];
        for (double v : boot.theta_rows[b]) {
            std::snprintf(buf, sizeof(buf), ",%.12g", v);
            os << buf;
        }
        os << "\n";
    }
}

/// Long format: one row per (t, x) grid point.
inline void write_estimand_csv(const EstimandGrid& grid, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << "t,x,value\n";
    char buf[96];
    for (std::size_t i = 0; i < grid.xs.size(); ++i)
        for (std::size_t k = 0; k < grid.ts.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.10g\n", grid.ts[k], grid.xs[i],
                          grid.values[i][k]);
            os << buf;
        }
}

inline void write_rates_csv(const std::vector<OERateRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << "from,to,bucket,stratum,rep_time,occurrence,exposure,empirical_rate,fitted_rate\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.transition.first << "," << r.transition.second << "," << r.bucket << ","
           << r.stratum << ",";
        std::snprintf(buf, sizeof(buf), "%.6f,%.6g,%.6g,", r.rep_time, r.occurrence, r.exposure);
        os << buf;
        if (r.empirical_defined) {
            std::snprintf(buf, sizeof(buf), "%.8g", r.empirical_rate);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.8g\n", r.fitted_rate);
        os << buf;
    }
}

}  // namespace msdelay
