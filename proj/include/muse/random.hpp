#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "muse/common.hpp"

namespace muse {

// splitmix64; used to derive independent stream seeds from (seed, stream id)
// pairs so parallel sampling stays reproducible regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ (0x6a09e667f3bcc909ull + stream));
}

// Deterministic RNG. Normal draws use Box-Muller on top of mt19937_64 so the
// produced sequence is pinned by this code, not by the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
        return Rng(derive_seed(seed, stream_id));
    }

    // uniform in [0, 1)
    Real uniform() {
        return static_cast<Real>(eng_() >> 11) * 0x1.0p-53;
    }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t index(std::uint64_t n) {
        require(n > 0, "Rng::index: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = eng_();
        while (v >= limit) v = eng_();
        return v % n;
    }

    Real normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        Real u1 = uniform();
        Real u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const Real r = std::sqrt(-2.0 * std::log(u1));
        const Real theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Real normal(Real mean, Real stddev) { return mean + stddev * normal(); }

    std::vector<Real> normal_vec(std::size_t n, Real mean = 0.0, Real stddev = 1.0) {
        std::vector<Real> out(n);
        for (auto& v : out) v = normal(mean, stddev);
        return out;
    }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    Real spare_ = 0.0;
};

}  // namespace muse
