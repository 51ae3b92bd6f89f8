#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

namespace tribeflow {

// Malformed or inconsistent input data. CLI exit code 2.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration, flags, or arguments. CLI exit code 1.
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Internal bookkeeping broke (count underflow, bad unassign, ...).
struct invariant_error : std::logic_error {
    using std::logic_error::logic_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is pinned by the standard; the distributions are hand rolled because the
// std ones are implementation defined and would break reproducible-model
// guarantees across toolchains.
class rng {
public:
    explicit rng(std::uint64_t seed, std::uint64_t stream = 0)
        : engine_(splitmix64(seed ^ splitmix64(stream))) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
    }

    double exponential(double fraction_rate) {
        double u;
        do { u = uniform01(); } while (u <= 0.0);
        return -std::log(u) / fraction_rate;
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1, u2;
        do { u1 = uniform01(); } while (u1 <= 0.0);
        u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // Index drawn proportionally to the (unnormalized, non-negative) weights.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0) || !std::isfinite(total))
            throw invariant_error("categorical: weights must be finite with positive sum");
        double u = uniform01() * total;
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) last_positive = i;
            acc += weights[i];
            if (u < acc) return i;
        }
        return last_positive;  // rounding ran off the end
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace tribeflow
