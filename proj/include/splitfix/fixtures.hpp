#pragma once

#include <cstdint>

#include "splitfix/linalg.hpp"

namespace splitfix {

// min 1/2 ||H x - o||^2 + alpha ||x||_1 with seeded Gaussian data.
struct LassoFixture {
    Matrix H;
    Vector o;
    double alpha;

    double objective(const Vector& x) const;
};

// alpha = ratio * ||H^T o||_inf, so ratio < 1 gives a nonzero solution.
LassoFixture make_lasso(Index observations, Index variables, std::uint64_t seed, double ratio = 0.2);

// The shipped instance: 5 observations, 10 variables.
LassoFixture seeded_lasso();

}  // namespace splitfix
