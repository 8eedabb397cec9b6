#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace dppvi {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Folds a tuple of stream labels into one 64-bit seed. Used to derive
// independent substreams from (master_seed, round, unit, ...) so that runs
// are reproducible and independent of scheduling.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

// Deterministic random stream with explicit Box-Muller normals. All
// randomness in the library flows through this class; nothing uses
// std::normal_distribution, whose draw sequence is implementation-defined.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    static RandomStream derive(std::uint64_t master, std::uint64_t a,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
        return RandomStream(derive_seed({master, a, b, c}));
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    // unbiased integer in [0, bound)
    std::uint64_t uniform_int(std::uint64_t bound) {
        if (bound == 0) return 0;
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    std::vector<int> permutation(int n) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(uniform_int(static_cast<std::uint64_t>(i) + 1));
            std::swap(idx[i], idx[j]);
        }
        return idx;
    }

    // uniformly random subset of size b, order randomized (Definition-4 style
    // sampling without replacement via partial Fisher-Yates)
    std::vector<int> sample_without_replacement(int n, int b) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < b; ++i) {
            int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(b);
        return idx;
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dppvi
