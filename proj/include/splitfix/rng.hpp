#pragma once

#include <cstdint>
#include <random>

#include "splitfix/linalg.hpp"

namespace splitfix {

// Seeded 64-bit stream. Distributions are derived from raw engine output here
// rather than through <random> distributions, whose algorithms are
// implementation-defined, so identical seeds give identical draws everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    // [0,1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    bool bernoulli(double p) { return uniform() < p; }
    std::size_t index(std::size_t n);

    Vector normal_vector(Index n);
    Vector uniform_vector(Index n, double lo, double hi);
    // Uniform in the Euclidean ball of the given radius.
    Vector ball_vector(Index n, double radius);
    Matrix normal_matrix(Index rows, Index cols);

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace splitfix
