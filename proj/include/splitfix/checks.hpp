#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "splitfix/operators.hpp"
#include "splitfix/rng.hpp"

namespace splitfix {

struct SampleReport {
    bool passed = true;
    double worst = 0.0;  // largest normalized violation (lhs - rhs) / (1 + ||x - y||^2)
    std::size_t pairs = 0;
    std::string inequality;
};

using PointSampler = std::function<Vector(Rng&)>;

// ||Tx-Ty||^2 <= ||x-y||^2 - (1-a)/a ||(Id-T)x-(Id-T)y||^2 on seeded pairs.
SampleReport check_averaged(const OperatorRef& T, double alpha, std::size_t pairs, std::uint64_t seed,
                            double tol = 1e-10, PointSampler sampler = {});
// alpha = 1/2 case written as ||Tx-Ty||^2 + ||(Id-T)x-(Id-T)y||^2 <= ||x-y||^2.
SampleReport check_firmly_nonexpansive(const OperatorRef& T, std::size_t pairs, std::uint64_t seed,
                                       double tol = 1e-10, PointSampler sampler = {});
SampleReport check_lipschitz(const OperatorRef& T, double delta, std::size_t pairs, std::uint64_t seed,
                             double tol = 1e-10, PointSampler sampler = {});
// <x-y, Bx-By> >= beta ||Bx-By||^2.
SampleReport check_cocoercive(const std::function<Vector(const Vector&)>& B, Index dim, double beta,
                              std::size_t pairs, std::uint64_t seed, double tol = 1e-10);
// Prox characterization <y-p, x-p> + g f(p) <= g f(y) at p = prox_{g f}(x) for sampled y.
SampleReport check_prox_inequality(const FunctionDescriptor& f, double gamma, const Vector& x, std::size_t samples,
                                   std::uint64_t seed, double tol = 1e-10, PointSampler sampler = {});

// Checks the declared tag of T: averaged constant when one is implied, Lipschitz otherwise.
SampleReport check_tag(const OperatorRef& T, std::size_t pairs, std::uint64_t seed, double tol = 1e-10);

}  // namespace splitfix
