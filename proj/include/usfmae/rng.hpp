#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace usfmae {

// Deterministic generator with a platform-independent bit stream
// (std::uniform_* distributions are implementation-defined, so all
// sampling goes through explicit conversions here).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // polar Box-Muller, cache discarded to keep the stream simple
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // truncated at +-2 sigma, resampled
    double trunc_normal(double sigma) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * sigma;
        }
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(p[i], p[j]);
        }
        return p;
    }

    // independent substream, e.g. per-image augmentation
    Rng fork(uint64_t stream) const {
        return Rng(state_ ^ (0x2545f4914f6cdd1dull * (stream + 1)));
    }

private:
    uint64_t state_;
};

}  // namespace usfmae
