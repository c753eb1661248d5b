#include "splitfix/fixtures.hpp"

#include "splitfix/rng.hpp"

namespace splitfix {

double LassoFixture::objective(const Vector& x) const {
    return 0.5 * (H * x - o).squaredNorm() + alpha * x.lpNorm<1>();
}

LassoFixture make_lasso(Index observations, Index variables, std::uint64_t seed, double ratio) {
    Rng rng(seed);
    LassoFixture f;
    f.H = rng.normal_matrix(observations, variables) / std::sqrt(static_cast<double>(observations));
    f.o = rng.normal_vector(observations);
    f.alpha = ratio * (f.H.transpose() * f.o).lpNorm<Eigen::Infinity>();
    return f;
}

LassoFixture seeded_lasso() { return make_lasso(5, 10, 20240917); }

}  // namespace splitfix
