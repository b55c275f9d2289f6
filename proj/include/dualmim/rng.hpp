#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace dualmim {

/// Seeded random source passed explicitly to every stochastic operation.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard)
/// and derives real/integer/normal variates with fixed formulas, so draw
/// sequences do not depend on the standard library's distribution code.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), unbiased via rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; the second variate is discarded to keep the stream stateless.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Exponential with unit mean.
    double exponential() {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return -std::log(u);
    }

    // Child stream for a sub-task; the parent advances by one draw.
    Rng fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& text) {
        std::istringstream is(text);
        is >> engine_;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace dualmim
