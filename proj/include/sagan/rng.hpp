#ifndef SAGAN_RNG_HPP
#define SAGAN_RNG_HPP

#include <cmath>
#include <cstdint>

#include "sagan/tensor.hpp"

namespace sagan {

// Counter-free splitmix64 generator. All randomness in the project flows
// through this type so that runs are reproducible from (seed, stream tags)
// alone; nothing needs to serialize generator state.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes two uniforms per draw.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stdev) { return mean + stdev * normal(); }

    // Uniform integer in [0, n).
    int64_t below(int64_t n) {
        return static_cast<int64_t>(next() % static_cast<uint64_t>(n));
    }

    void fill_normal(Tensor& t, double mean, double stdev) {
        for (auto& v : t.data) v = normal(mean, stdev);
    }

    void fill_uniform(Tensor& t, double lo, double hi) {
        for (auto& v : t.data) v = uniform(lo, hi);
    }

    // Hash-combine for deriving independent streams from (seed, tags).
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        return Rng(mix(mix(mix(seed, a), b), c));
    }

private:
    uint64_t state_;
};

}  // namespace sagan

#endif  // SAGAN_RNG_HPP
