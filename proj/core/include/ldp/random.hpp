#pragma once

#include <cstdint>
#include <random>

#include "ldp/tensor.hpp"

namespace ldp {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t parent, uint64_t index) {
    return splitmix64(parent ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

// Seeded random source. Identical seed -> identical draw sequence on the same
// platform. Single-owner: never share across threads; derive children with
// child() and hand those out instead.
class RandomSource {
  public:
    explicit RandomSource(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }

    RandomSource child(uint64_t index) const { return RandomSource(mix_seed(seed_, index)); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive on both ends
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(engine_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // standard normal via Box-Muller; the paired draw is cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stdev) { return mean + stdev * normal(); }

    Tensor normal_tensor(const std::vector<int>& shape) {
        Tensor t(shape);
        for (double& v : t.data) v = normal();
        return t;
    }

    Tensor uniform_tensor(const std::vector<int>& shape, double lo, double hi) {
        Tensor t(shape);
        for (double& v : t.data) v = uniform(lo, hi);
        return t;
    }

  private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ldp
