#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "lwf/chains.hpp"
#include "lwf/recursion.hpp"

namespace lwf {

inline constexpr const char* lwf_version = "0.1.0";

// Shortest round-trip decimal form; parsing it back yields the same bits,
// which is what makes rerun outputs byte-comparable.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string csv_coefficients(const std::vector<double>& a, long nmax) {
    if (a.empty()) throw std::invalid_argument("empty coefficient vector");
    std::string out = "n,a_n\n";
    const long last = std::min<long>(nmax, long(a.size()) - 1);
    for (long n = 0; n <= last; ++n) {
        out += std::to_string(n);
        out += ',';
        out += fmt(a[size_t(n)]);
        out += '\n';
    }
    return out;
}

inline std::string csv_h_curve(const std::vector<double>& a, int points = 101) {
    std::string out = "x,h\n";
    for (const auto& [x, h] : h_grid(a, points)) {
        out += fmt(x);
        out += ',';
        out += fmt(h);
        out += '\n';
    }
    return out;
}

inline std::string csv_alpha(const std::vector<long>& levels,
                             const std::vector<estimate>& rows) {
    std::string out = "n,estimate,stderr,lower,upper,cycles\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        out += std::to_string(levels[i]) + ',' + fmt(rows[i].value) + ',' +
               fmt(rows[i].se) + ',' + fmt(rows[i].lower) + ',' +
               fmt(rows[i].upper) + ',' + std::to_string(rows[i].samples) + '\n';
    }
    return out;
}

inline std::string csv_omega(const std::vector<omega_estimate>& rows) {
    std::string out = "n,estimate,stderr,lower,upper,cycles,escapes,escape_bound,cap\n";
    for (const auto& r : rows) {
        out += std::to_string(r.start) + ',' + fmt(r.value) + ',' + fmt(r.se) + ',' +
               fmt(r.lower) + ',' + fmt(r.upper) + ',' + std::to_string(r.replicates) +
               ',' + std::to_string(r.escapes) + ',' + fmt(r.escape_bound) + ',' +
               std::to_string(r.cap) + '\n';
    }
    return out;
}

inline std::string csv_t1(const std::vector<t1_row>& rows, long replicates) {
    std::string out = "n,estimate,stderr,lower,upper,cycles,censored,log_ratio\n";
    for (const auto& r : rows) {
        out += std::to_string(r.start) + ',' + fmt(r.mean) + ',' + fmt(r.se) + ',' +
               fmt(r.mean - 1.96 * r.se) + ',' + fmt(r.mean + 1.96 * r.se) + ',' +
               std::to_string(replicates) + ',' + std::to_string(r.censored) + ',' +
               fmt(r.log_over_mean) + '\n';
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    if (!out.good()) throw std::runtime_error("short write: " + path);
}

// Everything needed to rerun a command and get byte-identical data files.
struct run_manifest {
    std::string subcommand;
    nlohmann::json parameters;
    uint64_t seed = 0;
    int threads = 1;
    double wall_seconds = 0.0;
    std::vector<std::string> artifacts;

    std::string to_json() const {
        nlohmann::json j;
        j["subcommand"] = subcommand;
        j["parameters"] = parameters;
        j["seed"] = seed;
        j["threads"] = threads;
        j["wall_seconds"] = wall_seconds;
        j["artifacts"] = artifacts;
        j["version"] = lwf_version;
        return j.dump(2) + "\n";
    }
};

}  // namespace lwf
