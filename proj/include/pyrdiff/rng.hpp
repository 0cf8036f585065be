#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Deterministic counter-friendly random stream (splitmix64 core).
///
/// Streams for independent uses are derived by hashing a path of integers
/// into the seed, e.g. Rng::derive(seed, {iteration, sample, kind}). This
/// keeps training resumable without serializing generator state: the noise
/// consumed at iteration k depends only on (seed, k), not on history.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static Rng derive(uint64_t seed, std::initializer_list<uint64_t> path) {
        uint64_t s = mix(seed);
        for (uint64_t p : path) s = mix(s ^ (p + 0x9e3779b97f4a7c15ULL));
        return Rng(s);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller; two uniforms per draw, no cached state.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        // u1 in (0,1]: avoid log(0)
        u1 = 1.0 - u1;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    uint64_t state_;
};

template <typename T>
void fill_gaussian(Tensor<T>& t, Rng& rng) {
    for (auto& v : t.data) v = static_cast<T>(rng.gaussian());
}

template <typename T>
Tensor<T> gaussian_tensor(int c, int h, int w, Rng& rng) {
    Tensor<T> t(c, h, w);
    fill_gaussian(t, rng);
    return t;
}

}  // namespace pyrdiff
