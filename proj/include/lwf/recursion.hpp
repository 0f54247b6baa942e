#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lwf/lambda_measure.hpp"

namespace lwf {

// Truncated linear system for the coefficient sequence a_1..a_n_max with
// a_0 = 1 and everything beyond n_max pinned at 0. Row n reads
//   (S_n + sigma + theta) a_n
//     = sigma a_{n-1} + theta nu1 a_{n+1} + sum_{c=n+2}^{c_max} w_{n,c} a_{c-1}
// where S_n is the exact total coupling weight out of row n (finite part via
// the closed-form up-rate total, plus the boundary weight), so truncation
// only zeroes far coefficients and never drops diagonal mass.
struct recursion_system {
    long n_max = 0;
    long c_max = 0;
    double sigma = 0.0, theta = 0.0, nu0 = 0.0, nu1 = 0.0;
    double star_mass = 0.0;
    std::vector<std::vector<double>> w;  // w[n][c - (n+2)] for c in [n+2, c_max]
    std::vector<double> coupling_total;  // S_n, n in [1, n_max]
    std::vector<double> tail_mass;       // weight beyond c_max (counted in S_n)
};

inline recursion_system build_system(const model_params& p, long n_max, long c_max) {
    if (n_max < 1) throw std::invalid_argument("build_system: n_max >= 1");
    if (c_max < n_max + 1) throw std::invalid_argument("build_system: c_max >= n_max + 1");
    recursion_system sys;
    sys.n_max = n_max;
    sys.c_max = c_max;
    sys.sigma = p.sigma;
    sys.theta = p.theta;
    sys.nu0 = p.nu0;
    sys.nu1 = p.nu1;
    sys.star_mass = p.lambda.star_mass;
    sys.w.resize(size_t(n_max + 1));
    sys.coupling_total.assign(size_t(n_max + 1), 0.0);
    sys.tail_mass.assign(size_t(n_max + 1), 0.0);
    for (long n = 1; n <= n_max; ++n) {
        auto& row = sys.w[size_t(n)];
        double partial = 0.0;
        if (c_max >= n + 2) {
            row.reserve(size_t(c_max - n - 1));
            for (long c = n + 2; c <= c_max; ++c) {
                row.push_back(merger_weight(p.lambda, n, c));
                partial += row.back();
            }
            while (!row.empty() && row.back() == 0.0) row.pop_back();
            row.shrink_to_fit();
        }
        const double finite_total = dual_up_rate_total(p.lambda, n + 1) / double(n);
        const double s = finite_total + merger_weight_inf(p.lambda, n);
        sys.coupling_total[size_t(n)] = std::max(s, partial + merger_weight_inf(p.lambda, n));
        sys.tail_mass[size_t(n)] = std::max(0.0, finite_total - partial);
    }
    return sys;
}

struct coefficient_vector {
    std::vector<double> a;  // a[0] = 1, a[n] for n = 1..n_max
    long n_max = 0;
    long c_max = 0;
    std::string method;
    long iterations = 0;
    double stabilization_gap = 0.0;  // doubling driver: sup change on the kept head
};

namespace detail {

// Shared post-solve sanitation: coefficients must land in [0, 1] and be
// non-increasing up to tiny numerical wiggle.
inline void sanitize_coefficients(std::vector<double>& a) {
    for (size_t n = 1; n < a.size(); ++n) {
        double& v = a[n];
        if (!std::isfinite(v)) throw std::runtime_error("solver produced a non-finite value");
        if (v < 0.0) {
            if (v < -1e-9)
                throw std::runtime_error("solver produced a negative coefficient: " +
                                         std::to_string(v));
            v = 0.0;
        }
        if (v > 1.0) {
            if (v > 1.0 + 1e-9)
                throw std::runtime_error("solver produced a coefficient above 1: " +
                                         std::to_string(v));
            v = 1.0;
        }
        if (v > a[n - 1]) {
            if (v - a[n - 1] > 1e-9)
                throw std::runtime_error("solver broke monotonicity at n = " +
                                         std::to_string(n));
            v = a[n - 1];
        }
    }
}

}  // namespace detail

inline coefficient_vector solve_direct(const recursion_system& sys) {
    const long N = sys.n_max;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(N);
    for (long n = 1; n <= N; ++n) {
        const long r = n - 1;
        A(r, r) = sys.coupling_total[size_t(n)] + sys.sigma + sys.theta;
        if (n >= 2) A(r, r - 1) -= sys.sigma;
        else b(0) += sys.sigma;  // a_0 = 1
        if (n <= N - 1) A(r, r + 1) -= sys.theta * sys.nu1;
        const auto& row = sys.w[size_t(n)];
        for (size_t k = 0; k < row.size(); ++k) {
            const long c = n + 2 + long(k);
            const long col = c - 2;  // coefficient index c-1
            if (col >= N) break;
            A(r, col) -= row[k];
        }
    }
    Eigen::VectorXd x = A.partialPivLu().solve(b);
    coefficient_vector out;
    out.n_max = N;
    out.c_max = sys.c_max;
    out.method = "direct";
    out.a.resize(size_t(N + 1));
    out.a[0] = 1.0;
    for (long n = 1; n <= N; ++n) out.a[size_t(n)] = x(n - 1);
    detail::sanitize_coefficients(out.a);
    return out;
}

inline coefficient_vector solve_fixed_point(const recursion_system& sys,
                                            double tol = 1e-12,
                                            long max_iter = 1000000) {
    const long N = sys.n_max;
    std::vector<double> cur(size_t(N + 2), 0.0), next(size_t(N + 2), 0.0);
    cur[0] = next[0] = 1.0;
    long iter = 0;
    for (; iter < max_iter; ++iter) {
        double sup = 0.0;
        for (long n = 1; n <= N; ++n) {
            double acc = sys.sigma * cur[size_t(n - 1)] +
                         sys.theta * sys.nu1 * cur[size_t(n + 1)];
            const auto& row = sys.w[size_t(n)];
            for (size_t k = 0; k < row.size(); ++k) {
                const long c = n + 2 + long(k);
                if (c - 1 > N) break;
                acc += row[k] * cur[size_t(c - 1)];
            }
            const double v = acc / (sys.coupling_total[size_t(n)] + sys.sigma + sys.theta);
            next[size_t(n)] = v;
            sup = std::max(sup, std::abs(v - cur[size_t(n)]));
        }
        cur.swap(next);
        if (sup < tol) break;
    }
    if (iter >= max_iter)
        throw std::runtime_error("fixed-point solver did not converge");
    coefficient_vector out;
    out.n_max = N;
    out.c_max = sys.c_max;
    out.method = "fixed-point";
    out.iterations = iter + 1;
    out.a.assign(cur.begin(), cur.end() - 1);
    detail::sanitize_coefficients(out.a);
    return out;
}

// Row-n defect of a candidate coefficient vector (a[0] = 1 layout).
inline double recursion_residual(const recursion_system& sys,
                                 const std::vector<double>& a, long n) {
    const long N = sys.n_max;
    if (n < 1 || n > N) throw std::invalid_argument("recursion_residual: 1 <= n <= n_max");
    double lhs = (sys.coupling_total[size_t(n)] + sys.sigma + sys.theta) * a[size_t(n)];
    double rhs = sys.sigma * a[size_t(n - 1)];
    if (n + 1 <= N) rhs += sys.theta * sys.nu1 * a[size_t(n + 1)];
    const auto& row = sys.w[size_t(n)];
    for (size_t k = 0; k < row.size(); ++k) {
        const long c = n + 2 + long(k);
        if (c - 1 > N) break;
        rhs += row[k] * a[size_t(c - 1)];
    }
    return lhs - rhs;
}

struct solve_options {
    long n_start = 256;
    long n_cap = 4096;
    double stabilization_tol = 1e-10;
    bool use_fixed_point = false;
};

// Doubling driver: grow the truncation until the kept head of the
// coefficient vector stops moving.
inline coefficient_vector solve_auto(const model_params& p,
                                     solve_options opts = {}) {
    coefficient_vector prev;
    for (long N = opts.n_start; N <= opts.n_cap; N *= 2) {
        const recursion_system sys = build_system(p, N, N + 1);
        coefficient_vector cur =
            opts.use_fixed_point ? solve_fixed_point(sys) : solve_direct(sys);
        if (!prev.a.empty()) {
            double gap = 0.0;
            for (long n = 0; n <= prev.n_max / 2; ++n)
                gap = std::max(gap, std::abs(prev.a[size_t(n)] - cur.a[size_t(n)]));
            cur.stabilization_gap = gap;
            if (gap < opts.stabilization_tol) return cur;
        }
        prev = std::move(cur);
    }
    throw std::runtime_error("coefficient solve did not stabilize under doubling");
}

// Common-ancestor curve from the coefficient head: with y = 1 - x and
// Delta_n = a_n - a_{n+1} (a beyond the head treated as 0),
//   h(x) = x * sum_n Delta_n * (1 + y + ... + y^n).
// This form is exact at x = 0, 1, reproduces h ≡ x bit-for-bit when all
// a_n (n >= 1) vanish, and keeps x <= h <= 1 in floating point.
inline double eval_h(const std::vector<double>& a, double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("eval_h: x in [0,1]");
    if (a.empty() || a[0] != 1.0) throw std::invalid_argument("eval_h: a[0] must be 1");
    const double y = 1.0 - x;
    double geom = 0.0;
    double ypow = 1.0;
    double h = 0.0;
    const size_t last = a.size() - 1;
    for (size_t n = 0; n <= last; ++n) {
        geom += ypow;
        ypow *= y;
        const double next = (n == last) ? 0.0 : a[n + 1];
        const double delta = std::max(0.0, a[n] - next);
        h += delta * geom;
    }
    h *= x;
    return std::min(1.0, std::max(x, h));
}

// Plain series form h(x) = x * sum_n a_n (1-x)^n, same head, no
// rearrangement. Kept as an independent evaluation path; the two forms are
// algebraically identical, so their float outputs must stay within
// summation-rounding distance of each other.
inline double eval_h_series(const std::vector<double>& a, double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("eval_h_series: x in [0,1]");
    if (a.empty() || a[0] != 1.0)
        throw std::invalid_argument("eval_h_series: a[0] must be 1");
    const double y = 1.0 - x;
    double ypow = 1.0;
    double s = 0.0;
    for (size_t n = 0; n < a.size(); ++n) {
        s += a[n] * ypow;
        ypow *= y;
    }
    return std::min(1.0, std::max(x, x * s));
}

inline std::vector<std::pair<double, double>> h_grid(const std::vector<double>& a,
                                                     int points = 101) {
    if (points < 2) throw std::invalid_argument("h_grid: points >= 2");
    std::vector<std::pair<double, double>> out;
    out.reserve(size_t(points));
    for (int i = 0; i < points; ++i) {
        const double x = double(i) / double(points - 1);
        out.emplace_back(x, eval_h(a, x));
    }
    return out;
}

}  // namespace lwf
