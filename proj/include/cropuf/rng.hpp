#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cropuf {

namespace detail {

/// splitmix64 scrambler; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic random source. Every simulation draw goes through this
/// class so that a (seed, stream) pair pins the full sequence, and forked
/// streams stay reproducible no matter how work is scheduled.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(scramble(seed)) {}

    std::uint64_t seed() const { return seed_; }

    /// Child generator for an independent, schedule-free stream.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t s = seed_ ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1342543de82ef95ULL);
        return Rng(detail::splitmix64(s));
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1]; never zero, safe under log().
    double uniform_pos() { return 1.0 - uniform(); }

    /// Standard normal via Box-Muller (stateless variant, one value per call).
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Uniform integer in [0, bound); bound must be nonzero.
    std::uint64_t below(std::uint64_t bound) {
        // masked rejection keeps the draw unbiased
        std::uint64_t mask = ~std::uint64_t{0} >> countl_zero_nonzero(bound - 1 | 1);
        for (;;) {
            std::uint64_t v = engine_() & mask;
            if (v < bound) return v;
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t between(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    std::mt19937_64& engine() { return engine_; }

private:
    static std::uint64_t scramble(std::uint64_t seed) {
        std::uint64_t s = seed;
        return detail::splitmix64(s);
    }
    static int countl_zero_nonzero(std::uint64_t v) {
        int c = 0;
        for (std::uint64_t probe = std::uint64_t{1} << 63; probe && !(v & probe); probe >>= 1) ++c;
        return c;
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace cropuf
