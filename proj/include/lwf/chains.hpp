#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "lwf/lambda_measure.hpp"
#include "lwf/parallel.hpp"
#include "lwf/recursion.hpp"
#include "lwf/rng.hpp"

namespace lwf {

// Jump target meaning "absorbed at infinity".
inline constexpr long state_infinity = -1;
// Jump target meaning "finite but beyond the resolved range".
inline constexpr long state_far = -2;

struct jump_table {
    double total = 0.0;
    std::vector<std::pair<long, double>> moves;  // ascending by target; -1 first
};

enum class chain_kind {
    k,  // full line-count: mergers down, selection up
    l,  // pruned line-count: mergers, selection up, mutation pruning down
    d   // companion count-down chain: skip-free descent, collision up-jumps
};

// Per-state jump tables, built lazily and cached. All randomness lives in
// the caller; this class only exposes rates.
//
// For the count-down chain, collision up-jumps are enumerated only to
// `up_horizon`; mass landing beyond it goes to the state_far channel so a
// walk can classify such jumps instead of silently losing them. Measures
// with polynomial up-jump tails make full enumeration impossible.
class chain_system {
  public:
    chain_system(model_params p, chain_kind kind, long up_horizon = 4096)
        : p_(std::move(p)), kind_(kind), up_horizon_(up_horizon) {}

    const model_params& params() const { return p_; }
    chain_kind kind() const { return kind_; }

    const jump_table& at(long s) {
        if (s < 1) throw std::invalid_argument("chain state must be >= 1");
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(s);
        if (it == cache_.end()) it = cache_.emplace(s, build(s)).first;
        return it->second;
    }

  private:
    jump_table build(long s) const {
        std::map<long, double> acc;
        const double sigma = p_.sigma, theta = p_.theta;
        const double nu0 = p_.nu0, nu1 = p_.nu1;
        switch (kind_) {
            case chain_kind::k: {
                if (sigma > 0.0) acc[s + 1] += double(s) * sigma;
                add_mergers(p_.lambda, s, acc);
                break;
            }
            case chain_kind::l: {
                if (sigma > 0.0) acc[s + 1] += double(s) * sigma;
                add_mergers(p_.lambda, s, acc);
                if (s >= 2) {
                    if (theta * nu1 > 0.0) acc[s - 1] += double(s - 1) * theta * nu1;
                    if (theta * nu0 > 0.0)
                        for (long i = 1; i <= s - 1; ++i) acc[i] += theta * nu0;
                }
                break;
            }
            case chain_kind::d: {
                if (s == 1) break;  // absorbing
                acc[s - 1] += double(s - 1) * sigma;
                if (theta * nu1 > 0.0) acc[s + 1] += double(s - 1) * theta * nu1;
                const double boundary =
                    double(s - 1) * theta * nu0 + p_.lambda.star_mass;
                if (boundary > 0.0) acc[state_infinity] += boundary;
                const double up_total = dual_up_rate_total(p_.lambda, s);
                if (up_total > 0.0) {
                    double partial = 0.0;
                    double prev = -1.0;
                    for (long c = s + 1; c <= up_horizon_; ++c) {
                        const double r =
                            std::exp(log_choose(double(c - 1), double(c - s + 1)) +
                                     std::log(lambda_rate(p_.lambda, c, c - s + 1)));
                        if (r > 0.0) {
                            acc[c] += r;
                            partial += r;
                        }
                        if (partial >= up_total * (1.0 - 1e-12)) break;
                        if (r < up_total * 1e-17 && r <= prev) break;  // past the peak
                        prev = r;
                    }
                    const double residual = up_total - partial;
                    if (residual > up_total * 1e-15) acc[state_far] += residual;
                }
                break;
            }
        }
        jump_table tab;
        tab.moves.reserve(acc.size());
        for (const auto& [tgt, r] : acc) {
            tab.moves.emplace_back(tgt, r);
            tab.total += r;
        }
        return tab;
    }

    // Group-merger transitions b -> b-j+1. Atom-only measures hit just two
    // group sizes, so skip the scan that interior mass requires.
    static void add_mergers(const lambda_measure& lam, long b,
                            std::map<long, double>& acc) {
        if (b < 2) return;
        if (lam.has_interior()) {
            for (long j = 2; j <= b; ++j) {
                const double r = std::exp(log_choose(double(b), double(j))) *
                                 lambda_rate(lam, b, j);
                if (r > 0.0) acc[b - j + 1] += r;
            }
            return;
        }
        if (lam.kingman_mass > 0.0)
            acc[b - 1] += 0.5 * double(b) * double(b - 1) * lam.kingman_mass;
        if (lam.star_mass > 0.0) acc[1] += lam.star_mass;
    }

    model_params p_;
    chain_kind kind_;
    long up_horizon_;
    mutable std::map<long, jump_table> cache_;
    mutable std::mutex mu_;
};

enum class path_end { hit, horizon, boundary, capped, exhausted };

struct path_stats {
    path_end end = path_end::exhausted;
    double t = 0.0;
    long final_state = 0;
    long events = 0;
};

// Gillespie walk. on_dwell(state, time) fires for every completed sojourn,
// including the clipped one at the horizon.
template <class OnDwell>
path_stats run_chain(chain_system& sys, long start, long hit_state, double t_max,
                     long state_cap, long max_events, rng_stream& rng,
                     OnDwell&& on_dwell) {
    long s = start;
    double t = 0.0;
    long ev = 0;
    if (s == hit_state) return {path_end::hit, 0.0, s, 0};
    if (s > state_cap) return {path_end::capped, 0.0, s, 0};
    for (;;) {
        const jump_table& tab = sys.at(s);
        if (tab.total <= 0.0) {
            if (std::isfinite(t_max)) {
                on_dwell(s, t_max - t);
                return {path_end::horizon, t_max, s, ev};
            }
            return {path_end::exhausted, t, s, ev};
        }
        const double dwell = rng.exponential(tab.total);
        if (t + dwell >= t_max) {
            on_dwell(s, t_max - t);
            return {path_end::horizon, t_max, s, ev};
        }
        on_dwell(s, dwell);
        t += dwell;
        ++ev;
        double target = rng.u01() * tab.total;
        long next = tab.moves.back().first;
        for (const auto& [tgt, r] : tab.moves) {
            target -= r;
            if (target < 0.0) {
                next = tgt;
                break;
            }
        }
        if (next == state_infinity) return {path_end::boundary, t, next, ev};
        if (next == state_far) return {path_end::capped, t, next, ev};
        s = next;
        if (s == hit_state) return {path_end::hit, t, s, ev};
        if (s > state_cap) return {path_end::capped, t, s, ev};
        if (ev >= max_events) return {path_end::exhausted, t, s, ev};
    }
}

struct sampled_path {
    std::vector<std::pair<double, long>> points;  // (arrival time, state)
    path_stats stats;
};

inline sampled_path simulate_path(chain_system& sys, long start, double t_max,
                                  long state_cap, long max_events, rng_stream& rng,
                                  long hit_state = 0) {
    sampled_path out;
    out.points.emplace_back(0.0, start);
    double t = 0.0;
    out.stats = run_chain(sys, start, hit_state, t_max, state_cap, max_events, rng,
                          [&](long s, double dt) {
                              if (out.points.back().second != s)
                                  out.points.emplace_back(t, s);
                              t += dt;
                          });
    if (out.points.back().second != out.stats.final_state)
        out.points.emplace_back(out.stats.t, out.stats.final_state);
    return out;
}

namespace detail {

// Ratio estimate with batch-means error: value = sum(num)/sum(den), spread
// from contiguous batch ratios.
inline std::pair<double, double> ratio_batch(const std::vector<double>& num,
                                             const std::vector<double>& den,
                                             long batches = 100) {
    const long n = long(num.size());
    if (n < 4) throw std::invalid_argument("ratio_batch: too few cycles");
    const long B = std::min(batches, n / 2);
    const long m = n / B;
    double tot_n = 0.0, tot_d = 0.0;
    for (long i = 0; i < n; ++i) {
        tot_n += num[size_t(i)];
        tot_d += den[size_t(i)];
    }
    const double value = tot_n / tot_d;
    std::vector<double> r(size_t(B), 0.0);
    for (long b = 0; b < B; ++b) {
        double bn = 0.0, bd = 0.0;
        const long lo = b * m;
        const long hi = (b == B - 1) ? n : lo + m;
        for (long i = lo; i < hi; ++i) {
            bn += num[size_t(i)];
            bd += den[size_t(i)];
        }
        r[size_t(b)] = bd > 0.0 ? bn / bd : 0.0;
    }
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= double(B);
    double ss = 0.0;
    for (double v : r) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / (double(B) * double(B - 1)));
    return {value, se};
}

}  // namespace detail

struct estimate {
    double value = 0.0;
    double se = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    long samples = 0;
};

// Equilibrium exceedance of the pruned line count by renewal-reward over
// returns to 1: fraction of time spent strictly above each requested level.
inline std::vector<estimate> estimate_alpha(const model_params& p,
                                            const std::vector<long>& levels,
                                            long cycles, uint64_t seed, int threads) {
    if (!(p.sigma > 0.0))
        throw std::invalid_argument("exceedance estimation needs sigma > 0");
    if (cycles < 200) throw std::invalid_argument("need at least 200 cycles");
    for (long n : levels)
        if (n < 1) throw std::invalid_argument("levels must be >= 1");
    chain_system sys(p, chain_kind::l);
    const size_t m = levels.size();
    std::vector<double> occ(size_t(cycles) * m, 0.0);
    std::vector<double> len(size_t(cycles), 0.0);
    parallel_for(0, cycles, threads, [&](long i) {
        rng_stream rng(seed, 0xA1FA0000u + 1, uint64_t(i));
        const jump_table& at1 = sys.at(1);
        double cycle = rng.exponential(at1.total);  // sojourn at 1, only exit is up
        double* row = &occ[size_t(i) * m];
        const auto st =
            run_chain(sys, 2, 1, std::numeric_limits<double>::infinity(), 10000000L,
                      1000000000L, rng, [&](long s, double dt) {
                          cycle += dt;
                          for (size_t q = 0; q < m; ++q)
                              if (s > levels[q]) row[q] += dt;
                      });
        if (st.end != path_end::hit)
            throw std::runtime_error("pruned excursion exceeded bounds");
        len[size_t(i)] = cycle;
    });
    std::vector<estimate> out(m);
    std::vector<double> num(size_t(cycles), 0.0);
    for (size_t q = 0; q < m; ++q) {
        for (long i = 0; i < cycles; ++i) num[size_t(i)] = occ[size_t(i) * m + q];
        const auto [value, se] = detail::ratio_batch(num, len);
        out[q] = estimate{value, se, value - 1.96 * se, value + 1.96 * se, cycles};
    }
    return out;
}

// Rigorous upper bound on the probability that the companion chain ever
// returns to 1 from any state beyond the cap. Monotonicity in the start
// state reduces this to the coefficient at the cap itself; the fixed-point
// solve converges from below, hence the margin factor.
inline double dual_return_bound(const model_params& p, long cap) {
    if (cap < 4) throw std::invalid_argument("cap too small");
    if (cap > 8192) return 1.0;
    const long N = cap + 128;
    const auto cv = solve_fixed_point(build_system(p, N, N + 1), 1e-14, 2000000);
    return std::min(1.0, 4.0 * cv.a[size_t(cap)] + 1e-14);
}

struct omega_estimate {
    long start = 0;
    double value = 0.0;  // hit fraction, cap-escapes classified as misses
    double se = 0.0;
    double lower = 0.0;  // bracket on the true hit probability
    double upper = 0.0;
    long replicates = 0;
    long escapes = 0;         // paths that crossed the cap
    double escape_bound = 1.0;  // certified return bound from beyond the cap
    long cap = 0;
};

// Probability that the companion chain started at d hits 1 before absorbing
// at infinity. Paths that cross the cap are misses up to the certified
// bound, which also sets the bracket width.
inline std::vector<omega_estimate> estimate_omega(const model_params& p,
                                                  const std::vector<long>& starts,
                                                  long replicates, uint64_t seed,
                                                  int threads, long cap = 0) {
    if (replicates < 200) throw std::invalid_argument("need at least 200 replicates");
    double bound = 1.0;
    if (cap == 0) {
        for (long trial : {128L, 256L, 512L, 1024L}) {
            const double b = dual_return_bound(p, trial);
            if (b < 1e-8) {
                cap = trial;
                bound = b;
                break;
            }
        }
        if (cap == 0) cap = 5000;  // censored mode: bracket stays honest but wide
    } else if (cap <= 8192) {
        bound = dual_return_bound(p, cap);
    }
    chain_system sys(p, chain_kind::d, cap);
    std::vector<omega_estimate> out;
    out.reserve(starts.size());
    for (size_t q = 0; q < starts.size(); ++q) {
        const long d = starts[q];
        if (d < 1) throw std::invalid_argument("start states must be >= 1");
        std::vector<double> hit(size_t(replicates), 0.0);
        std::vector<double> esc(size_t(replicates), 0.0);
        parallel_for(0, replicates, threads, [&](long i) {
            rng_stream rng(seed, 0x03E6A0000u + uint64_t(q) + 1, uint64_t(i));
            const auto st = run_chain(
                sys, d, 1, std::numeric_limits<double>::infinity(), cap, 1000000000L,
                rng, [](long, double) {});
            switch (st.end) {
                case path_end::hit: hit[size_t(i)] = 1.0; break;
                case path_end::boundary: break;
                case path_end::capped: esc[size_t(i)] = 1.0; break;
                default: throw std::runtime_error("companion path did not resolve");
            }
        });
        std::vector<double> ones(size_t(replicates), 1.0);
        const auto [value, se] = detail::ratio_batch(hit, ones);
        long escapes = 0;
        for (double e : esc) escapes += long(e);
        omega_estimate oe;
        oe.start = d;
        oe.value = value;
        oe.se = se;
        oe.lower = value;
        oe.upper = std::min(1.0, value + bound * double(escapes) / double(replicates));
        oe.replicates = replicates;
        oe.escapes = escapes;
        oe.escape_bound = bound;
        oe.cap = cap;
        out.push_back(oe);
    }
    return out;
}

struct t1_row {
    long start = 0;
    double mean = 0.0;
    double se = 0.0;
    long censored = 0;
    double log_over_mean = 0.0;  // ln(start) / mean
};

// Mean first-passage time of the full line-count chain to 1, censored at
// the horizon when one is given.
inline std::vector<t1_row> estimate_t1(const model_params& p,
                                       const std::vector<long>& starts,
                                       long replicates, uint64_t seed, int threads,
                                       double horizon =
                                           std::numeric_limits<double>::infinity(),
                                       long state_cap = 10000000L) {
    if (replicates < 2) throw std::invalid_argument("need at least 2 replicates");
    chain_system sys(p, chain_kind::k);
    std::vector<t1_row> out;
    out.reserve(starts.size());
    for (size_t q = 0; q < starts.size(); ++q) {
        const long k = starts[q];
        if (k < 1) throw std::invalid_argument("start states must be >= 1");
        std::vector<double> time(size_t(replicates), 0.0);
        std::vector<long> cens(size_t(replicates), 0);
        parallel_for(0, replicates, threads, [&](long i) {
            rng_stream rng(seed, 0x71AA0000u + uint64_t(q) + 1, uint64_t(i));
            const auto st = run_chain(sys, k, 1, horizon, state_cap, 1000000L, rng,
                                      [](long, double) {});
            switch (st.end) {
                case path_end::hit: time[size_t(i)] = st.t; break;
                case path_end::horizon:
                case path_end::capped:
                case path_end::exhausted:
                    if (!std::isfinite(horizon))
                        throw std::runtime_error(
                            "descent did not finish; give a horizon for "
                            "supercritical runs");
                    time[size_t(i)] = horizon;
                    cens[size_t(i)] = 1;
                    break;
                default: throw std::runtime_error("unexpected path end");
            }
        });
        double mean = 0.0;
        for (double t : time) mean += t;
        mean /= double(replicates);
        double ss = 0.0;
        for (double t : time) ss += (t - mean) * (t - mean);
        const double se = std::sqrt(ss / (double(replicates) * double(replicates - 1)));
        long censored = 0;
        for (long c : cens) censored += c;
        out.push_back({k, mean, se, censored, std::log(double(k)) / mean});
    }
    return out;
}

}  // namespace lwf
