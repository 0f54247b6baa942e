#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lwf/lambda_measure.hpp"
#include "lwf/parallel.hpp"
#include "lwf/quad.hpp"
#include "lwf/rng.hpp"

namespace lwf {

inline constexpr long level_inf = std::numeric_limits<long>::max();

enum class flight_kind : uint8_t { merger, star, cross, circle };

// One Poisson transition element, as an order-preserving self-map of the
// levels. Merger membership beyond the explicitly sampled window is decided
// by a stateless hash so that forward and dual passes, and any re-query,
// see identical bits.
struct flight {
    flight_kind kind = flight_kind::merger;
    long level = 0;    // star/cross/circle site
    bool full = false;  // merger of all levels at once
    double z = 0.0;     // lazy inclusion probability beyond resolved_to
    long resolved_to = 0;
    uint64_t seed = 0;
    uint64_t event_id = 0;
    std::vector<long> members;  // sorted, authoritative for levels <= resolved_to

    bool contains(long lvl) const {
        if (kind != flight_kind::merger) return false;
        if (full) return true;
        if (lvl <= resolved_to)
            return std::binary_search(members.begin(), members.end(), lvl);
        if (z > 0.0) return hash_bernoulli(seed, event_id, uint64_t(lvl), z);
        return false;
    }
};

inline long apply(const flight& f, long l) {
    if (l == level_inf) return level_inf;
    switch (f.kind) {
        case flight_kind::star: return l >= f.level ? l + 1 : l;
        case flight_kind::cross: return l > f.level ? l - 1 : l;
        case flight_kind::circle: return l > f.level ? f.level : l;
        case flight_kind::merger: {
            if (f.full) return 1;
            const long cut = std::min(l, f.resolved_to);
            long c = long(std::upper_bound(f.members.begin(), f.members.end(), cut) -
                          f.members.begin());
            if (f.z > 0.0 && f.resolved_to < l)
                for (long k = f.resolved_to + 1; k <= l; ++k)
                    if (hash_bernoulli(f.seed, f.event_id, uint64_t(k), f.z)) ++c;
            return l - std::max<long>(0, c - 1);
        }
    }
    return l;
}

// Dual flight: min f^{-1}({d, d+1, ...}), with min of nothing = infinity.
inline long dual_apply(const flight& f, long d) {
    if (d == level_inf) return level_inf;
    switch (f.kind) {
        case flight_kind::star: return d > f.level ? d - 1 : d;
        case flight_kind::cross: return d > f.level ? d + 1 : d;
        case flight_kind::circle: return d > f.level ? level_inf : d;
        case flight_kind::merger: {
            if (f.full) return d == 1 ? 1 : level_inf;
            long kept = 0;
            bool seen = false;
            for (long l = 1; l <= 4000000; ++l) {
                const bool m = f.contains(l);
                if (!m || !seen) {
                    ++kept;
                    if (kept == d) return l;
                }
                if (m) seen = true;
            }
            throw std::runtime_error("merger preimage scan exceeded limit");
        }
    }
    return d;
}

struct timed_flight {
    double t = 0.0;  // in [-horizon, 0]
    uint64_t id = 0;
    flight f;
};

// All transition elements over [-s, 0] that can move some level in the
// current window. Growing the window materializes the complementary events
// for the fresh levels; each growth generation has its own substream, so a
// config is a deterministic function of (seed, config_index, generation).
struct flight_config {
    model_params params;
    double horizon = 0.0;
    long window = 0;
    int generation = 0;
    uint64_t seed = 0;  // per-config membership hash key
    uint64_t base_seed = 0;
    uint64_t config_index = 0;
    std::vector<timed_flight> events;  // sorted by (t, id)
};

namespace detail {

inline double site_rate(const beta_component& bc, long b, long j) {
    return bc.weight * std::exp(log_beta(bc.shape_a + double(j) - 2.0,
                                         bc.shape_b + double(b - j)) -
                                log_beta(bc.shape_a, bc.shape_b));
}

inline double site_rate(const point_component& pc, long b, long j) {
    return pc.weight * std::pow(pc.z, double(j - 2)) *
           std::pow(1.0 - pc.z, double(b - j));
}

inline std::vector<long> uniform_subset(rng_stream& rng, long lo, long hi, long k) {
    std::vector<long> pool;
    pool.reserve(size_t(hi - lo + 1));
    for (long v = lo; v <= hi; ++v) pool.push_back(v);
    for (long i = 0; i < k; ++i) {
        const long j = i + long(rng.below(uint64_t(pool.size() - size_t(i))));
        std::swap(pool[size_t(i)], pool[size_t(j)]);
    }
    std::vector<long> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

// Adds every event that can move a level in (w_prev, w_new] but none in
// [1, w_prev]; with w_prev = 0 this is the base population of the window.
inline void extend_events(flight_config& cfg, long w_prev, long w_new, int gen) {
    rng_stream rng(cfg.base_seed, 0xF1190000ull + uint64_t(gen), cfg.config_index);
    const uint64_t id_base = uint64_t(gen) << 40;
    uint64_t ctr = 0;
    const auto& p = cfg.params;
    const double s = cfg.horizon;
    const long fresh = w_new - w_prev;

    const auto add_site_events = [&](flight_kind kind, double rate) {
        if (rate <= 0.0) return;
        const long n = rng.poisson(rate * double(fresh) * s);
        for (long e = 0; e < n; ++e) {
            timed_flight tf;
            tf.t = -s * rng.u01();
            tf.id = id_base + ctr++;
            tf.f.kind = kind;
            tf.f.level = w_prev + 1 + long(rng.below(uint64_t(fresh)));
            cfg.events.push_back(std::move(tf));
        }
    };
    add_site_events(flight_kind::star, p.sigma);
    add_site_events(flight_kind::cross, p.theta * p.nu1);
    add_site_events(flight_kind::circle, p.theta * p.nu0);

    const double kappa = p.lambda.kingman_mass;
    if (kappa > 0.0 && w_new >= 2) {
        const double pairs = 0.5 * (double(w_new) * double(w_new - 1) -
                                    double(w_prev) * double(w_prev - 1));
        const long n = rng.poisson(kappa * pairs * s);
        for (long e = 0; e < n; ++e) {
            double r = rng.u01() * pairs;
            long j = std::max(w_prev + 1, 2L);
            double acc = double(j - 1);
            while (r >= acc && j < w_new) {
                ++j;
                acc += double(j - 1);
            }
            const long i = 1 + long(rng.below(uint64_t(j - 1)));
            timed_flight tf;
            tf.t = -s * rng.u01();
            tf.id = id_base + ctr++;
            tf.f.kind = flight_kind::merger;
            tf.f.resolved_to = level_inf;
            tf.f.members = {std::min(i, j), std::max(i, j)};
            cfg.events.push_back(std::move(tf));
        }
    }

    if (p.lambda.star_mass > 0.0 && w_prev < 2 && w_new >= 2) {
        const long n = rng.poisson(p.lambda.star_mass * s);
        for (long e = 0; e < n; ++e) {
            timed_flight tf;
            tf.t = -s * rng.u01();
            tf.id = id_base + ctr++;
            tf.f.kind = flight_kind::merger;
            tf.f.full = true;
            cfg.events.push_back(std::move(tf));
        }
    }

    if (p.lambda.has_interior()) {
        // Split the thinned z-merger intensity by (component, members kept in
        // the old window, members on the fresh levels).
        struct slot {
            int comp;
            long k1, k2;
        };
        std::vector<slot> tags;
        std::vector<double> w;
        double total = 0.0;
        const long ncomp = long(p.lambda.betas.size());
        const auto push = [&](int comp, long k1, long k2, double rate) {
            if (rate <= 0.0) return;
            tags.push_back({comp, k1, k2});
            w.push_back(rate);
            total += rate;
        };
        for (long k1 = 0; k1 <= std::min(w_prev, 1L); ++k1) {
            const double c1 = k1 == 0 ? 1.0 : double(w_prev);
            for (long k2 = std::max(2 - k1, 1L); k2 <= fresh; ++k2) {
                const long j = k1 + k2;
                const double c2 = std::exp(log_choose(double(fresh), double(k2)));
                for (int ci = 0; ci < int(ncomp); ++ci)
                    push(ci, k1, k2,
                         c1 * c2 * detail::site_rate(p.lambda.betas[size_t(ci)], w_new, j));
                for (int ci = 0; ci < int(p.lambda.points.size()); ++ci)
                    push(int(ncomp) + ci, k1, k2,
                         c1 * c2 *
                             detail::site_rate(p.lambda.points[size_t(ci)], w_new, j));
            }
        }
        if (total > 0.0) {
            const long n = rng.poisson(total * s);
            for (long e = 0; e < n; ++e) {
                const auto& tag = tags[rng.categorical(w, total)];
                const long j = tag.k1 + tag.k2;
                double z;
                if (tag.comp < ncomp) {
                    const auto& bc = p.lambda.betas[size_t(tag.comp)];
                    z = rng.beta(bc.shape_a + double(j) - 2.0,
                                 bc.shape_b + double(w_new - j));
                } else {
                    z = p.lambda.points[size_t(tag.comp - ncomp)].z;
                }
                timed_flight tf;
                tf.t = -s * rng.u01();
                tf.id = id_base + ctr++;
                tf.f.kind = flight_kind::merger;
                tf.f.z = z;
                tf.f.resolved_to = w_new;
                tf.f.seed = cfg.seed;
                tf.f.event_id = tf.id;
                if (tag.k1 == 1) tf.f.members = {1 + long(rng.below(uint64_t(w_prev)))};
                if (tag.k2 > 0) {
                    auto fresh_members =
                        detail::uniform_subset(rng, w_prev + 1, w_new, tag.k2);
                    tf.f.members.insert(tf.f.members.end(), fresh_members.begin(),
                                        fresh_members.end());
                }
                cfg.events.push_back(std::move(tf));
            }
        }
    }

    std::sort(cfg.events.begin(), cfg.events.end(),
              [](const timed_flight& a, const timed_flight& b) {
                  return a.t != b.t ? a.t < b.t : a.id < b.id;
              });
}

inline flight_config sample_config(const model_params& p, long window, double horizon,
                                   uint64_t seed, uint64_t config_index) {
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
    flight_config cfg;
    cfg.params = p;
    cfg.horizon = horizon;
    cfg.window = window;
    cfg.base_seed = seed;
    cfg.config_index = config_index;
    cfg.seed = mix64(seed ^ mix64(config_index ^ 0xC0F117ull));
    extend_events(cfg, 0, window, 0);
    return cfg;
}

inline void grow_window(flight_config& cfg) {
    const long w2 = cfg.window * 2;
    cfg.generation += 1;
    extend_events(cfg, cfg.window, w2, cfg.generation);
    cfg.window = w2;
}

inline long forward_map(const flight_config& cfg, long l, long* max_state = nullptr) {
    long s = l;
    long mx = l;
    for (const auto& tf : cfg.events) {
        s = apply(tf.f, s);
        if (s != level_inf && s > mx) mx = s;
    }
    if (max_state && mx > *max_state) *max_state = mx;
    return s;
}

inline long dual_map(const flight_config& cfg, long d, long* max_state = nullptr) {
    long s = d;
    long mx = d;
    for (auto it = cfg.events.rbegin(); it != cfg.events.rend(); ++it) {
        s = dual_apply(it->f, s);
        if (s == level_inf) break;
        if (s > mx) mx = s;
    }
    if (max_state && mx > *max_state) *max_state = mx;
    return s;
}

inline std::string trace_json(const flight_config& cfg) {
    std::ostringstream out;
    for (const auto& tf : cfg.events) {
        nlohmann::json j;
        j["t"] = tf.t;
        j["id"] = tf.id;
        switch (tf.f.kind) {
            case flight_kind::star: j["kind"] = "star"; break;
            case flight_kind::cross: j["kind"] = "cross"; break;
            case flight_kind::circle: j["kind"] = "circle"; break;
            case flight_kind::merger: j["kind"] = "merger"; break;
        }
        if (tf.f.kind == flight_kind::merger) {
            j["full"] = tf.f.full;
            j["z"] = tf.f.z;
            j["resolved_to"] = tf.f.resolved_to == level_inf ? -1 : tf.f.resolved_to;
            j["members"] = tf.f.members;
        } else {
            j["level"] = tf.f.level;
        }
        out << j.dump() << '\n';
    }
    return out.str();
}

struct duality_report {
    long configs = 0;
    long violations = 0;
    long exploded = 0;
    long grown = 0;  // configs that needed at least one window growth
    long max_window = 0;
    std::string first_failure;  // event trace of the first violating config
};

// Runs the coupled forward and reversed-dual passes over fresh Poisson
// configurations and checks the crossing indicators for every start pair.
inline duality_report verify_pathwise_duality(const model_params& p, long window,
                                              double horizon, long n_configs,
                                              long lmax, long dmax, uint64_t seed,
                                              int threads, long window_cap = 65536) {
    if (n_configs < 1) throw std::invalid_argument("need at least one config");
    const long w0 = std::max({window, lmax, dmax});
    struct slot {
        long violations = 0;
        bool exploded = false;
        bool grew = false;
        long win = 0;
        std::string trace;
    };
    std::vector<slot> slots;
    slots.resize(size_t(n_configs));
    parallel_for(0, n_configs, threads, [&](long i) {
        flight_config cfg = sample_config(p, w0, horizon, seed, uint64_t(i));
        std::vector<long> fwd(size_t(lmax) + 1, 0);
        std::vector<long> bwd(size_t(dmax) + 1, 0);
        auto& sl = slots[size_t(i)];
        for (;;) {
            long mx = 0;
            for (long l = 1; l <= lmax; ++l) fwd[size_t(l)] = forward_map(cfg, l, &mx);
            for (long d = 1; d <= dmax; ++d) bwd[size_t(d)] = dual_map(cfg, d, &mx);
            if (mx <= cfg.window) break;
            if (cfg.window >= window_cap) {
                sl.exploded = true;
                break;
            }
            grow_window(cfg);
            sl.grew = true;
        }
        sl.win = cfg.window;
        if (!sl.exploded) {
            for (long l = 1; l <= lmax; ++l)
                for (long d = 1; d <= dmax; ++d) {
                    const bool reached = fwd[size_t(l)] >= d;
                    const bool descended = bwd[size_t(d)] <= l;
                    if (reached != descended) ++sl.violations;
                }
        }
        if (sl.violations > 0) sl.trace = trace_json(cfg);
    });
    duality_report rep;
    rep.configs = n_configs;
    for (const auto& sl : slots) {
        rep.violations += sl.violations;
        rep.exploded += sl.exploded ? 1 : 0;
        rep.grown += sl.grew ? 1 : 0;
        rep.max_window = std::max(rep.max_window, sl.win);
        if (rep.first_failure.empty() && !sl.trace.empty()) rep.first_failure = sl.trace;
    }
    return rep;
}

}  // namespace lwf
