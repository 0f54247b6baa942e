#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace lwf {

// Counter-based generator (Philox4x32-10). Output is a pure function of
// (key, counter), so independent substreams are cheap and replay is exact
// on every platform: no hidden state, no distribution-library variance.
struct philox4x32 {
    static constexpr uint32_t mul0 = 0xD2511F53u;
    static constexpr uint32_t mul1 = 0xCD9E8D57u;
    static constexpr uint32_t bump0 = 0x9E3779B9u;
    static constexpr uint32_t bump1 = 0xBB67AE85u;

    static std::array<uint32_t, 4> block(std::array<uint32_t, 2> key,
                                         std::array<uint32_t, 4> ctr) {
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = uint64_t(mul0) * ctr[0];
            const uint64_t p1 = uint64_t(mul1) * ctr[2];
            const std::array<uint32_t, 4> next{
                uint32_t(p1 >> 32) ^ ctr[1] ^ key[0],
                uint32_t(p1),
                uint32_t(p0 >> 32) ^ ctr[3] ^ key[1],
                uint32_t(p0)};
            ctr = next;
            key[0] += bump0;
            key[1] += bump1;
        }
        return ctr;
    }
};

inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline double u64_to_unit(uint64_t x) {
    return double(x >> 11) * 0x1.0p-53;  // [0, 1)
}

// Sequential stream addressed by (seed, id0, id1). Each draw advances a
// 64-bit counter; a Philox block yields two 64-bit words which are both
// consumed before the counter advances again.
class rng_stream {
  public:
    rng_stream(uint64_t seed, uint64_t id0, uint64_t id1 = 0) {
        const uint64_t k0 = mix64(seed ^ mix64(id0));
        const uint64_t k1 = mix64(k0 ^ mix64(id1 ^ 0x5851F42D4C957F2Dull));
        key_ = {uint32_t(k0), uint32_t(k0 >> 32)};
        salt_ = k1;
        counter_ = 0;
        have_spare_ = false;
        spare_ = 0;
    }

    uint64_t next_u64() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const auto out = philox4x32::block(
            key_, {uint32_t(counter_), uint32_t(counter_ >> 32),
                   uint32_t(salt_), uint32_t(salt_ >> 32)});
        ++counter_;
        spare_ = (uint64_t(out[2]) << 32) | out[3];
        have_spare_ = true;
        return (uint64_t(out[0]) << 32) | out[1];
    }

    double u01() { return u64_to_unit(next_u64()); }

    // Exponential with given rate.
    double exponential(double rate) {
        return -std::log1p(-u01()) / rate;
    }

    // Standard normal, Box-Muller (no cached second value: keeps the
    // draw count a deterministic function of call sequence).
    double normal() {
        const double u = u01();
        const double v = u01();
        const double r = std::sqrt(-2.0 * std::log1p(-u));
        return r * std::cos(6.283185307179586476925286766559 * v);
    }

    // Gamma(shape, 1), Marsaglia-Tsang squeeze.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(u01_open(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = u01_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    // Poisson count. Knuth product for small means, halving split above.
    long poisson(double mean) {
        if (!(mean >= 0.0)) throw std::invalid_argument("poisson: bad mean");
        if (mean == 0.0) return 0;
        if (mean > 30.0) return poisson(mean * 0.5) + poisson(mean * 0.5);
        const double limit = std::exp(-mean);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= u01();
        } while (p > limit);
        return k - 1;
    }

    // Index ~ weights (unnormalized, nonnegative, positive total).
    size_t categorical(const std::vector<double>& weights, double total) {
        double target = u01() * total;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            target -= weights[i];
            if (target < 0.0) return i;
        }
        return weights.empty() ? throw std::logic_error("categorical: empty")
                               : weights.size() - 1;
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection to kill modulo bias.
        const uint64_t limit = n * ((~uint64_t(0)) / n);
        for (;;) {
            const uint64_t x = next_u64();
            if (x < limit) return x % n;
        }
    }

  private:
    double u01_open() {
        for (;;) {
            const double u = u01();
            if (u > 0.0) return u;
        }
    }

    std::array<uint32_t, 2> key_;
    uint64_t salt_;
    uint64_t counter_;
    uint64_t spare_;
    bool have_spare_;
};

// Stateless coin: a pure function of (seed, event_id, slot, p). Used where
// a decision must be recomputable later without storing it (per-level
// membership of unbounded merger events).
inline bool hash_bernoulli(uint64_t seed, uint64_t event_id, uint64_t slot,
                           double p) {
    const uint64_t k = mix64(seed ^ mix64(event_id));
    const auto out = philox4x32::block(
        {uint32_t(k), uint32_t(k >> 32)},
        {uint32_t(slot), uint32_t(slot >> 32), 0x0F1E2D3Cu, 0x4B5A6978u});
    const double u = u64_to_unit((uint64_t(out[0]) << 32) | out[1]);
    return u < p;
}

}  // namespace lwf
