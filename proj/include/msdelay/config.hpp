#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msdelay/core.hpp"
#include "msdelay/scenario.hpp"

// Flat key-value configuration: one `key = value` pair per line, '#' starts a
// comment. Environment variables MSDELAY_<KEY> (upper-cased key) override
// file values.

namespace msdelay {

class FlatConfig {
  public:
    FlatConfig() = default;

    static FlatConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path);
        return from_stream(is);
    }

    static FlatConfig from_stream(std::istream& is) {
        FlatConfig cfg;
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected key = value");
            cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const { return lookup(key) != nullptr; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const std::string* v = lookup(key);
        return v ? *v : fallback;
    }

    double get_double(const std::string& key, double fallback) const {
        const std::string* v = lookup(key);
        if (!v) return fallback;
        try {
            return std::stod(*v);
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': not a number: " + *v);
        }
    }

    long get_int(const std::string& key, long fallback) const {
        const std::string* v = lookup(key);
        if (!v) return fallback;
        try {
            return std::stol(*v);
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': not an integer: " + *v);
        }
    }

    std::vector<double> get_vector(const std::string& key,
                                   const std::vector<double>& fallback) const {
        const std::string* v = lookup(key);
        if (!v) return fallback;
        std::vector<double> out;
        std::stringstream ss(*v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': bad vector element: " + item);
            }
        }
        return out;
    }

    std::string echo() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

  private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, std::string> env_cache_;

    const std::string* lookup(const std::string& key) const {
        std::string env_key = "MSDELAY_";
        for (char c : key) env_key += static_cast<char>(std::toupper(c));
        if (const char* env = std::getenv(env_key.c_str())) {
            env_cache_[key] = env;
            return &env_cache_[key];
        }
        auto it = values_.find(key);
        return it == values_.end() ? nullptr : &it->second;
    }
};

inline ScenarioConfig scenario_from_config(const FlatConfig& cfg) {
    ScenarioConfig sc;
    sc.n = static_cast<int>(cfg.get_int("n", sc.n));
    sc.eta = cfg.get_double("eta", sc.eta);
    sc.theta = cfg.get_vector("theta", sc.theta);
    sc.f = cfg.get_vector("f", sc.f);
    sc.g = cfg.get_vector("g", sc.g);
    sc.x_min = cfg.get_double("x_min", sc.x_min);
    sc.x_max = cfg.get_double("x_max", sc.x_max);
    sc.v_max = cfg.get_double("v_max", sc.v_max);
    sc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long>(sc.seed)));
    sc.validate();
    return sc;
}

}  // namespace msdelay
