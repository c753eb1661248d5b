#include "splitfix/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace splitfix {

namespace {

PointSampler default_sampler(Index n) {
    return [n](Rng& rng) -> Vector { return 3.0 * rng.normal_vector(n); };
}

// Half of the pairs are independent draws, half are close pairs, which probe the local
// behavior of piecewise maps.
std::pair<Vector, Vector> draw_pair(Rng& rng, const PointSampler& s, std::size_t k) {
    Vector x = s(rng);
    Vector y = s(rng);
    if (k % 2 == 1) y = x + 1e-2 * (y - x);
    return {x, y};
}

template <class Violation>
SampleReport run_pairs(std::size_t pairs, std::uint64_t seed, double tol, const PointSampler& sampler,
                       std::string inequality, Violation violation) {
    Rng rng(seed);
    SampleReport rep;
    rep.inequality = std::move(inequality);
    rep.pairs = pairs;
    for (std::size_t k = 0; k < pairs; ++k) {
        auto [x, y] = draw_pair(rng, sampler, k);
        double v = violation(x, y) / (1.0 + (x - y).squaredNorm());
        rep.worst = std::max(rep.worst, v);
    }
    rep.passed = rep.worst <= tol;
    return rep;
}

}  // namespace

SampleReport check_averaged(const OperatorRef& T, double alpha, std::size_t pairs, std::uint64_t seed, double tol,
                            PointSampler sampler) {
    if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("check_averaged: alpha must lie in (0,1]");
    if (!sampler) sampler = default_sampler(T.dim());
    std::ostringstream ineq;
    ineq << "||Tx-Ty||^2 <= ||x-y||^2 - (1-a)/a ||(Id-T)x-(Id-T)y||^2 with a = " << alpha;
    const double c = (1.0 - alpha) / alpha;
    return run_pairs(pairs, seed, tol, sampler, ineq.str(), [&](const Vector& x, const Vector& y) {
        Vector tx = T(x), ty = T(y);
        Vector rx = x - tx, ry = y - ty;
        return (tx - ty).squaredNorm() + c * (rx - ry).squaredNorm() - (x - y).squaredNorm();
    });
}

SampleReport check_firmly_nonexpansive(const OperatorRef& T, std::size_t pairs, std::uint64_t seed, double tol,
                                       PointSampler sampler) {
    if (!sampler) sampler = default_sampler(T.dim());
    return run_pairs(pairs, seed, tol, sampler, "||Tx-Ty||^2 + ||(Id-T)x-(Id-T)y||^2 <= ||x-y||^2",
                     [&](const Vector& x, const Vector& y) {
                         Vector tx = T(x), ty = T(y);
                         return (tx - ty).squaredNorm() + ((x - tx) - (y - ty)).squaredNorm() - (x - y).squaredNorm();
                     });
}

SampleReport check_lipschitz(const OperatorRef& T, double delta, std::size_t pairs, std::uint64_t seed, double tol,
                             PointSampler sampler) {
    if (!sampler) sampler = default_sampler(T.dim());
    std::ostringstream ineq;
    ineq << "||Tx-Ty|| <= " << delta << " ||x-y||";
    return run_pairs(pairs, seed, tol, sampler, ineq.str(), [&](const Vector& x, const Vector& y) {
        return (T(x) - T(y)).squaredNorm() - delta * delta * (x - y).squaredNorm();
    });
}

SampleReport check_cocoercive(const std::function<Vector(const Vector&)>& B, Index dim, double beta,
                              std::size_t pairs, std::uint64_t seed, double tol) {
    std::ostringstream ineq;
    ineq << "<x-y, Bx-By> >= " << beta << " ||Bx-By||^2";
    return run_pairs(pairs, seed, tol, default_sampler(dim), ineq.str(), [&](const Vector& x, const Vector& y) {
        Vector d = B(x) - B(y);
        return beta * d.squaredNorm() - (x - y).dot(d);
    });
}

SampleReport check_prox_inequality(const FunctionDescriptor& f, double gamma, const Vector& x, std::size_t samples,
                                   std::uint64_t seed, double tol, PointSampler sampler) {
    if (!sampler) sampler = default_sampler(x.size());
    Rng rng(seed);
    Vector p = prox(f, gamma, x);
    double fp = value(f, p);
    SampleReport rep;
    rep.inequality = "<y-p, x-p> + g f(p) <= g f(y)";
    for (std::size_t k = 0; k < samples; ++k) {
        Vector y = sampler(rng);
        if (k % 2 == 1) y = p + 1e-2 * (y - p);
        double fy = value(f, y);
        if (!std::isfinite(fy)) continue;
        double lhs = (y - p).dot(x - p) + gamma * fp;
        double rhs = gamma * fy;
        double scale = 1.0 + std::abs(rhs) + (y - p).norm() * (x - p).norm();
        rep.worst = std::max(rep.worst, (lhs - rhs) / scale);
        ++rep.pairs;
    }
    rep.passed = rep.worst <= tol;
    return rep;
}

SampleReport check_tag(const OperatorRef& T, std::size_t pairs, std::uint64_t seed, double tol) {
    if (auto a = T.tag().averaged_constant()) return check_averaged(T, *a, pairs, seed, tol);
    return check_lipschitz(T, *T.tag().lipschitz_constant(), pairs, seed, tol);
}

}  // namespace splitfix
