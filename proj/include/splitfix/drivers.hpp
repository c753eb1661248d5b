#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splitfix/operators.hpp"
#include "splitfix/relaxation.hpp"
#include "splitfix/rng.hpp"

namespace splitfix {

enum class Status { Converged, MaxIterations, PreconditionViolated };
std::string to_string(Status s);

struct StopRule {
    std::size_t max_iter = 100000;
    double residual_tol = 1e-8;
    double stagnation_tol = 1e-14;   // relative step ||x_{n+1}-x_n|| <= tol (1+||x_n||)
    double divergence_guard = 1e8;   // flag when ||x_n|| > guard (1+||x_0||) and still growing
    std::size_t snapshot_every = 0;  // 0 selects max(1, max_iter/1000)

    std::size_t snapshot_interval() const;
    void validate() const;
};

struct IterTrace {
    Status status = Status::MaxIterations;
    std::size_t iterations = 0;
    Vector x;  // solution representative at termination

    std::vector<std::size_t> snapshot_iters;
    std::vector<Vector> snapshots;
    std::vector<double> residuals;
    std::vector<double> objective;  // empty when no objective was supplied
    std::vector<double> wall_ms;    // cumulative, aligned with residuals

    bool diverging = false;
    bool stagnated = false;
    std::optional<std::uint64_t> seed;
    std::vector<Warning> warnings;
    std::map<std::string, std::string> metadata;

    double final_residual() const { return residuals.empty() ? 0.0 : residuals.back(); }
};

// Loop bookkeeping shared by every driver and splitting method.
//   while (true) {
//     r = ...; if (rec.check(r, x_n)) break;      // converged at x_n
//     x_{n+1} = ...; if (rec.advance(x_n, x_{n+1})) break;
//   }
//   return rec.finish(x);
class TraceRecorder {
public:
    using Objective = std::function<double(const Vector&)>;

    TraceRecorder(const StopRule& stop, const Vector& x0, Objective objective = {});

    // Records residual r for the current representative x. True when r <= residual_tol
    // and may_converge is set.
    bool check(double r, const Vector& x, bool may_converge = true);
    // Counts one update. True when the run must stop (max_iter, stagnation, divergence).
    // Randomized methods pass check_stagnation = false: an idle draw leaves x unchanged.
    bool advance(const Vector& x_prev, const Vector& x_next, bool check_stagnation = true);
    std::size_t iteration() const { return iter_; }
    IterTrace finish(const Vector& x_final);
    IterTrace& trace() { return trace_; }

private:
    StopRule stop_;
    Objective objective_;
    IterTrace trace_;
    std::size_t iter_ = 0;
    std::size_t every_;
    double x0_norm_;
    double last_norm_;
    std::chrono::steady_clock::time_point t0_;
    bool done_ = false;
};

// Iteration trace as CSV: iter,residual,objective,wall_ms. The wall_ms column is left empty
// unless include_timing is set, so that identical runs give identical files.
void write_trace_csv(const IterTrace& trace, std::ostream& os, bool include_timing = false);

class BlockSchedule {
public:
    static BlockSchedule full(std::size_t m);
    // Consecutive groups of block_size indices, cycling; window = ceil(m / block_size).
    static BlockSchedule round_robin(std::size_t m, std::size_t block_size);
    // Each index enters with probability p; an index absent for window-1 iterations is forced in.
    static BlockSchedule random_subset(std::size_t m, double p, std::size_t window, std::uint64_t seed);
    // Repeats the given list of index sets.
    static BlockSchedule cyclic_sets(std::size_t m, std::vector<std::vector<std::size_t>> sets, std::size_t window);

    std::vector<std::size_t> next();
    std::size_t m() const { return m_; }
    std::size_t window() const { return window_; }

private:
    enum class Kind { Full, RoundRobin, Random, Sets } kind_ = Kind::Full;
    std::size_t m_ = 0, window_ = 1, block_size_ = 1, n_ = 0;
    double p_ = 1.0;
    Rng rng_{0};
    std::vector<std::size_t> last_seen_;
    std::vector<std::vector<std::size_t>> sets_;
};

// Tracks the covering condition: every index appears in each run of `window` consecutive sets.
class CoverageMonitor {
public:
    CoverageMonitor(std::size_t m, std::size_t window);
    // Returns the first index missing from the last `window` sets, if any.
    std::optional<std::size_t> observe(const std::vector<std::size_t>& active);

private:
    std::size_t window_, n_ = 0;
    std::vector<std::optional<std::size_t>> last_;
};

IterTrace banach_picard(const OperatorRef& T, const Vector& x0, const StopRule& stop = {});

IterTrace km_iterate(const OperatorRef& T, const RelaxationSchedule& schedule, const Vector& x0,
                     const StopRule& stop = {});

struct CompositeKmOptions {
    double eps = 1e-3;
};
// Per-iteration operator factories; stationary runs pass constant factories.
IterTrace composite_km(const std::function<OperatorRef(std::size_t)>& T1_seq,
                       const std::function<OperatorRef(std::size_t)>& T2_seq, const RelaxationSchedule& lambda,
                       const Vector& x0, const StopRule& stop = {}, CompositeKmOptions opt = {});
// Upper end of the relaxation band for the given constants.
double composite_km_lambda_max(double alpha1, double alpha2, double eps);

struct CycleResult {
    IterTrace trace;
    std::vector<Vector> limits;     // x_1 .. x_m
    std::vector<double> residuals;  // ||x_i - T_i x_{i+1}||, x_{m+1} = x_1
};
// Sweep x -> T_1(T_2(...T_m x)); ops[0] is T_1.
CycleResult cyclic_iterate(const std::vector<OperatorRef>& ops, const Vector& x0, const StopRule& stop = {});
std::vector<double> cycle_residuals(const std::vector<OperatorRef>& ops, const std::vector<Vector>& limits);

IterTrace block_update_iterate(const OperatorRef& T0, const std::vector<OperatorRef>& Ts,
                               const std::vector<double>& weights, BlockSchedule schedule, const Vector& x0,
                               const std::vector<Vector>& t_init, const StopRule& stop = {});

using ErrorSource = std::function<Vector(std::size_t n, Rng& rng)>;
IterTrace stochastic_km(const OperatorRef& T, const RelaxationSchedule& schedule, const ErrorSource& errors,
                        const Vector& x0, Rng& rng, const StopRule& stop = {}, bool summability_declared = false);

struct RandomBlockOptions {
    double eps = 1e-3;
};
// T acts on the flattened product vector; block_dims splits it into coordinates.
IterTrace random_block_km(const OperatorRef& T, const std::vector<Index>& block_dims,
                          const RelaxationSchedule& lambda, const std::vector<double>& activation_probs,
                          const Vector& x0, Rng& rng, const StopRule& stop = {}, RandomBlockOptions opt = {});

// alpha_n = a / (n + 1) with a in (0,1], or a caller-supplied sequence (not validated).
struct SteepestSchedule {
    double a = 1.0;
    std::function<double(std::size_t)> custom;
    double at(std::size_t n) const { return custom ? custom(n) : a / (static_cast<double>(n) + 1.0); }
};
IterTrace hybrid_steepest_descent(const OperatorRef& T, const std::function<Vector(const Vector&)>& grad_g,
                                  const SteepestSchedule& alpha, const Vector& x0, const StopRule& stop = {});

}  // namespace splitfix
