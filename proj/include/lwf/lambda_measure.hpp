#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lwf/quad.hpp"

namespace lwf {

struct lambda_parse_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct assumption_error : std::domain_error {
    using std::domain_error::domain_error;
};

struct beta_component {
    double weight;
    double shape_a;
    double shape_b;
};

struct point_component {
    double weight;
    double z;  // interior: (0, 1)
};

// Finite measure on [0,1] driving multiple-merger rates: an atom at 0,
// an atom at 1, and a mixture of interior point masses and beta densities.
// Total mass is normalized to 1.
struct lambda_measure {
    double kingman_mass = 0.0;
    double star_mass = 0.0;
    std::vector<beta_component> betas;
    std::vector<point_component> points;
    bool rescaled = false;
    double input_total = 1.0;

    double interior_mass() const {
        double m = 0.0;
        for (const auto& b : betas) m += b.weight;
        for (const auto& p : points) m += p.weight;
        return m;
    }
    double total_mass() const { return kingman_mass + star_mass + interior_mass(); }
    bool has_interior() const { return !betas.empty() || !points.empty(); }
};

namespace detail {

inline void fail_at(size_t pos, const std::string& what) {
    throw lambda_parse_error("column " + std::to_string(pos + 1) + ": " + what);
}

inline double parse_number(std::string_view s, size_t pos_base, const char* what) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    double value = 0.0;
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last)
        fail_at(pos_base, std::string("expected a number for ") + what + ", got '" +
                              std::string(s) + "'");
    return value;
}

}  // namespace detail

// Grammar:   spec := term ('+' term)*
//            term := [weight '*'] atom
//            atom := 'kingman' | 'star' | 'uniform' | 'beta:A,B' | 'point:Z'
// Whitespace is ignored. point:0 and point:1 fold into the endpoint atoms.
// Weights must be positive; if they do not sum to 1 the measure is rescaled
// and flagged.
inline lambda_measure parse_lambda(std::string_view text) {
    lambda_measure m;
    if (text.empty()) detail::fail_at(0, "empty measure specification");

    // Strip spaces, remembering original positions for error messages.
    std::string s;
    std::vector<size_t> pos;
    s.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
        if (!std::isspace(static_cast<unsigned char>(text[i]))) {
            s.push_back(text[i]);
            pos.push_back(i);
        }
    }
    if (s.empty()) detail::fail_at(0, "empty measure specification");
    pos.push_back(text.size());  // sentinel for end-of-string diagnostics

    size_t start = 0;
    while (start <= s.size()) {
        // Term separator: '+' not directly after an exponent marker.
        size_t end = start;
        while (end < s.size()) {
            if (s[end] == '+' && end > start && s[end - 1] != 'e' && s[end - 1] != 'E')
                break;
            ++end;
        }
        if (end == start) detail::fail_at(pos[std::min(start, pos.size() - 1)], "empty term");

        std::string_view term(s.data() + start, end - start);
        const size_t term_pos = pos[start];

        double weight = 1.0;
        std::string_view atom = term;
        size_t atom_off = start;
        if (const size_t star = term.find('*'); star != std::string_view::npos) {
            weight = detail::parse_number(term.substr(0, star), term_pos, "weight");
            if (!(weight > 0.0)) detail::fail_at(term_pos, "weight must be positive");
            atom = term.substr(star + 1);
            atom_off = start + star + 1;
            if (atom.empty()) detail::fail_at(pos[start + star], "missing component after '*'");
        }
        const size_t atom_pos = pos[atom_off];

        std::string_view name = atom;
        std::string_view args;
        size_t args_off = atom_off;
        if (const size_t colon = atom.find(':'); colon != std::string_view::npos) {
            name = atom.substr(0, colon);
            args = atom.substr(colon + 1);
            args_off = atom_off + colon + 1;
        }

        if (name == "kingman") {
            if (!args.empty()) detail::fail_at(atom_pos, "kingman takes no arguments");
            m.kingman_mass += weight;
        } else if (name == "star") {
            if (!args.empty()) detail::fail_at(atom_pos, "star takes no arguments");
            m.star_mass += weight;
        } else if (name == "uniform") {
            if (!args.empty()) detail::fail_at(atom_pos, "uniform takes no arguments");
            m.betas.push_back({weight, 1.0, 1.0});
        } else if (name == "beta") {
            const size_t comma = args.find(',');
            if (comma == std::string_view::npos)
                detail::fail_at(pos[args_off], "beta needs two parameters 'beta:A,B'");
            const double a = detail::parse_number(args.substr(0, comma), pos[args_off],
                                                  "beta shape A");
            const double b = detail::parse_number(args.substr(comma + 1),
                                                  pos[args_off + comma + 1], "beta shape B");
            if (!(a > 0.0) || !(b > 0.0))
                detail::fail_at(pos[args_off], "beta shapes must be positive");
            m.betas.push_back({weight, a, b});
        } else if (name == "point") {
            if (args.empty()) detail::fail_at(atom_pos, "point needs a location 'point:Z'");
            const double z = detail::parse_number(args, pos[args_off], "point location");
            if (z < 0.0 || z > 1.0)
                detail::fail_at(pos[args_off], "point location must lie in [0,1]");
            if (z == 0.0)
                m.kingman_mass += weight;
            else if (z == 1.0)
                m.star_mass += weight;
            else
                m.points.push_back({weight, z});
        } else {
            detail::fail_at(atom_pos, "unknown component '" + std::string(name) + "'");
        }

        if (end == s.size()) break;
        start = end + 1;
        if (start == s.size()) detail::fail_at(pos[end], "dangling '+'");
    }

    const double total = m.total_mass();
    m.input_total = total;
    if (std::abs(total - 1.0) > 1e-12) {
        m.rescaled = true;
        m.kingman_mass /= total;
        m.star_mass /= total;
        for (auto& b : m.betas) b.weight /= total;
        for (auto& p : m.points) p.weight /= total;
    }
    return m;
}

inline std::string to_string(const lambda_measure& m) {
    std::ostringstream out;
    out.precision(17);
    bool first = true;
    auto sep = [&]() {
        if (!first) out << " + ";
        first = false;
    };
    if (m.kingman_mass > 0.0) { sep(); out << m.kingman_mass << "*kingman"; }
    if (m.star_mass > 0.0) { sep(); out << m.star_mass << "*star"; }
    for (const auto& b : m.betas) {
        sep();
        if (b.shape_a == 1.0 && b.shape_b == 1.0)
            out << b.weight << "*uniform";
        else
            out << b.weight << "*beta:" << b.shape_a << "," << b.shape_b;
    }
    for (const auto& p : m.points) { sep(); out << p.weight << "*point:" << p.z; }
    return out.str();
}

// (1 - (1-z)^b - b z (1-z)^(b-1)) / z^2, the group-size >= 2 binomial tail
// seen through the z^-2 kernel. The positive series form avoids the small-z
// cancellation of the closed form.
inline double binomial_pair_tail_ratio(double z, double omz, long b) {
    if (b < 2) return 0.0;
    if (double(b) * z < 0.1) {
        double acc = 0.0;
        double term = 0.5 * double(b) * double(b - 1) * std::pow(omz, double(b - 2));
        for (long k = 2; k <= b; ++k) {
            acc += term;
            if (term < acc * 1e-17) break;
            term *= z / omz * double(b - k) / double(k + 1);
        }
        return acc;
    }
    const double log_omz = std::log(omz);
    const double head = std::exp(double(b) * log_omz);
    const double head1 = std::exp(double(b - 1) * log_omz);
    return (1.0 - head - double(b) * z * head1) / (z * z);
}

// (1 - (1-z)^(d-1) (1 + (d-1) z)) / z^2: total finite up-jump kernel of the
// companion chain at state d. Positive series for small (d-1)z.
inline double dual_up_kernel_ratio(double z, double omz, long d) {
    if (d < 2) return 0.0;
    const long n = d - 1;
    if (double(n) * z < 0.05) {
        const double base = std::pow(omz, double(n));
        double term = 0.5 * double(d) * double(n) * base;  // j = 1 entry
        double acc = 0.0;
        for (long j = 1; j < 400; ++j) {
            acc += term;
            if (term < acc * 1e-17) break;
            term *= z * double(d + j) / double(j + 2);
        }
        return acc;
    }
    const double head = std::pow(omz, double(n)) * (1.0 + double(n) * z);
    return (1.0 - head) / (z * z);
}

// Per-collision rate for a given group size: b active levels, groups of
// exactly j (2 <= j <= b).
inline double lambda_rate(const lambda_measure& m, long b, long j) {
    if (b < 2 || j < 2 || j > b)
        throw std::invalid_argument("lambda_rate: need 2 <= j <= b");
    double rate = 0.0;
    if (j == 2) rate += m.kingman_mass;
    if (j == b) rate += m.star_mass;
    for (const auto& p : m.points)
        rate += p.weight * std::exp(double(j - 2) * std::log(p.z) +
                                    double(b - j) * std::log1p(-p.z));
    for (const auto& be : m.betas)
        rate += be.weight * std::exp(log_beta(be.shape_a + double(j - 2),
                                              be.shape_b + double(b - j)) -
                                     log_beta(be.shape_a, be.shape_b));
    return rate;
}

// Coefficient coupling weight: (1/n) C(c-1, c-n) lambda_{c, c-n} for
// c >= n+2. The atom at 0 contributes only at c = n+2 and is kept exact.
inline double merger_weight(const lambda_measure& m, long n, long c) {
    if (n < 1 || c < n + 2) throw std::invalid_argument("merger_weight: need c >= n+2, n >= 1");
    const long j = c - n;
    double w = 0.0;
    if (c == n + 2)
        w += m.kingman_mass * 0.5 * double(n + 1);  // C(n+1,2)/n, computed exactly
    const double lc = log_choose(double(c - 1), double(j));
    for (const auto& p : m.points)
        w += p.weight *
             std::exp(lc + double(j - 2) * std::log(p.z) + double(n) * std::log1p(-p.z)) /
             double(n);
    for (const auto& be : m.betas)
        w += be.weight *
             std::exp(lc + log_beta(be.shape_a + double(j - 2), be.shape_b + double(n)) -
                      log_beta(be.shape_a, be.shape_b)) /
             double(n);
    return w;
}

// Weight on the boundary coefficient (index infinity): (1/n) * mass at 1.
inline double merger_weight_inf(const lambda_measure& m, long n) {
    if (n < 1) throw std::invalid_argument("merger_weight_inf: need n >= 1");
    return m.star_mass / double(n);
}

// Sum over group sizes of C(b,j) lambda_{b,j}: the total collision activity
// among b levels. Closed forms for atoms and points, quadrature for betas.
inline double total_merger_rate(const lambda_measure& m, long b) {
    if (b < 2) return 0.0;
    double rate = m.kingman_mass * 0.5 * double(b) * double(b - 1);
    if (b >= 2) rate += m.star_mass;
    for (const auto& p : m.points)
        rate += p.weight * binomial_pair_tail_ratio(p.z, 1.0 - p.z, b);
    for (const auto& be : m.betas) {
        const double lb = log_beta(be.shape_a, be.shape_b);
        rate += be.weight *
                integrate_unit([&](double z, double omz) {
                    if (z < 1e-200 || omz < 1e-200) return 0.0;
                    const double lomz = (z <= 0.5) ? std::log1p(-z) : std::log(omz);
                    return binomial_pair_tail_ratio(z, omz, b) *
                           std::exp((be.shape_a - 1.0) * std::log(z) +
                                    (be.shape_b - 1.0) * lomz - lb);
                });
    }
    return rate;
}

// Total rate of finite up-jumps out of state d for the companion chain:
// sum over c > d of C(c-1, c-d+1) lambda_{c, c-d+1}. Excludes the atom at 1
// (that mass jumps straight to the boundary) and the selection/mutation
// channels. U_1 = 0.
inline double dual_up_rate_total(const lambda_measure& m, long d) {
    if (d < 2) return 0.0;
    double rate = m.kingman_mass * 0.5 * double(d) * double(d - 1);
    for (const auto& p : m.points)
        rate += p.weight * dual_up_kernel_ratio(p.z, 1.0 - p.z, d);
    for (const auto& be : m.betas) {
        const double lb = log_beta(be.shape_a, be.shape_b);
        rate += be.weight *
                integrate_unit([&](double z, double omz) {
                    if (z < 1e-200 || omz < 1e-200) return 0.0;
                    const double lomz = (z <= 0.5) ? std::log1p(-z) : std::log(omz);
                    return dual_up_kernel_ratio(z, omz, d) *
                           std::exp((be.shape_a - 1.0) * std::log(z) +
                                    (be.shape_b - 1.0) * lomz - lb);
                });
    }
    return rate;
}

// Critical selection strength: -int log(1-z) z^-2 Lambda(dz). Infinite when
// there is mass at either endpoint or a beta component with shape_a <= 1.
inline double sigma_star(const lambda_measure& m) {
    const double inf = std::numeric_limits<double>::infinity();
    if (m.kingman_mass > 0.0 || m.star_mass > 0.0) return inf;
    double s = 0.0;
    for (const auto& p : m.points)
        s += p.weight * (-std::log1p(-p.z)) / (p.z * p.z);
    for (const auto& be : m.betas) {
        if (be.shape_a <= 1.0) return inf;
        const double lb = log_beta(be.shape_a, be.shape_b);
        s += be.weight *
             integrate_unit([&](double z, double omz) {
                 if (z < 1e-200 || omz < 1e-200) return 0.0;
                 const double lomz = (z <= 0.5) ? std::log1p(-z) : std::log(omz);
                 return -lomz * std::exp((be.shape_a - 3.0) * std::log(z) +
                                         (be.shape_b - 1.0) * lomz - lb);
             });
    }
    return s;
}

// Full parameter set. nu1 is stored explicitly so that nu0 + nu1 = 1 is an
// invariant rather than a convention.
struct model_params {
    lambda_measure lambda;
    double sigma = 0.0;
    double theta = 0.0;
    double nu0 = 0.0;
    double nu1 = 0.0;

    static model_params make(lambda_measure lam, double sigma, double theta,
                             double nu0) {
        model_params p;
        p.lambda = std::move(lam);
        p.sigma = sigma;
        p.theta = theta;
        p.nu0 = nu0;
        p.nu1 = 1.0 - nu0;
        return p;
    }
};

// Range checks plus the standing drift condition sigma < sigma_star.
// Callers that deliberately study the supercritical regime skip this with
// check_drift = false.
inline void validate_params(const model_params& p, bool check_drift = true) {
    if (!(p.sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    if (!(p.theta >= 0.0)) throw std::invalid_argument("theta must be >= 0");
    if (!(p.nu0 >= 0.0 && p.nu0 <= 1.0))
        throw std::invalid_argument("nu0 must lie in [0,1]");
    if (std::abs(p.nu0 + p.nu1 - 1.0) > 1e-12)
        throw std::invalid_argument("nu0 + nu1 must equal 1");
    if (std::abs(p.lambda.total_mass() - 1.0) > 1e-9)
        throw std::invalid_argument("measure mass must equal 1");
    if (check_drift && p.sigma > 0.0) {
        const double crit = sigma_star(p.lambda);
        if (!(p.sigma < crit)) {
            std::ostringstream msg;
            msg << "drift condition violated: sigma = " << p.sigma
                << " but the critical value is " << crit;
            throw assumption_error(msg.str());
        }
    }
}

// Cached per-size rate rows lambda_{b, 2..b}. Thread safe; rows are built
// once and never mutated afterwards.
class rate_table {
  public:
    explicit rate_table(lambda_measure m) : m_(std::move(m)) {}

    const lambda_measure& measure() const { return m_; }

    // Row for size b: entries j = 2..b.
    const std::vector<double>& row(long b) const {
        if (b < 2) throw std::invalid_argument("rate_table: b >= 2");
        std::lock_guard<std::mutex> lock(mu_);
        auto it = rows_.find(b);
        if (it == rows_.end()) {
            std::vector<double> r(size_t(b - 1));
            for (long j = 2; j <= b; ++j) r[size_t(j - 2)] = lambda_rate(m_, b, j);
            it = rows_.emplace(b, std::move(r)).first;
        }
        return it->second;
    }

    double rate(long b, long j) const {
        if (j < 2 || j > b) throw std::invalid_argument("rate_table: need 2 <= j <= b");
        return row(b)[size_t(j - 2)];
    }

    std::string to_csv(long bmax) const {
        std::ostringstream out;
        out.precision(17);
        out << "b,j,lambda\n";
        for (long b = 2; b <= bmax; ++b) {
            const auto& r = row(b);
            for (long j = 2; j <= b; ++j)
                out << b << "," << j << "," << r[size_t(j - 2)] << "\n";
        }
        return out.str();
    }

  private:
    lambda_measure m_;
    mutable std::map<long, std::vector<double>> rows_;
    mutable std::mutex mu_;
};

}  // namespace lwf
