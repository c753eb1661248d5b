#include "splitfix/drivers.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <ostream>
#include <sstream>

#include "splitfix/errors.hpp"
#include "splitfix/parallel.hpp"

namespace splitfix {

std::string to_string(Status s) {
    switch (s) {
        case Status::Converged: return "Converged";
        case Status::MaxIterations: return "MaxIterations";
        case Status::PreconditionViolated: return "PreconditionViolated";
    }
    return "?";
}

std::size_t StopRule::snapshot_interval() const {
    if (snapshot_every > 0) return snapshot_every;
    return std::max<std::size_t>(1, max_iter / 1000);
}

void StopRule::validate() const {
    if (max_iter < 1) throw std::invalid_argument("StopRule: max_iter must be >= 1");
    if (!(residual_tol > 0)) throw std::invalid_argument("StopRule: residual_tol must be positive");
    if (!(stagnation_tol > 0)) throw std::invalid_argument("StopRule: stagnation_tol must be positive");
    if (!(divergence_guard > 0)) throw std::invalid_argument("StopRule: divergence_guard must be positive");
}

// ---- recorder -----------------------------------------------------------

TraceRecorder::TraceRecorder(const StopRule& stop, const Vector& x0, Objective objective)
    : stop_(stop), objective_(std::move(objective)), every_(stop.snapshot_interval()), x0_norm_(x0.norm()),
      last_norm_(x0.norm()), t0_(std::chrono::steady_clock::now()) {
    stop_.validate();
    require_finite(x0, "initial point");
}

bool TraceRecorder::check(double r, const Vector& x, bool may_converge) {
    trace_.residuals.push_back(r);
    if (objective_) trace_.objective.push_back(objective_(x));
    trace_.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count());
    if (iter_ % every_ == 0) {
        trace_.snapshot_iters.push_back(iter_);
        trace_.snapshots.push_back(x);
    }
    if (may_converge && r <= stop_.residual_tol) {
        trace_.status = Status::Converged;
        trace_.metadata["stop_reason"] = "residual";
        done_ = true;
        return true;
    }
    return false;
}

bool TraceRecorder::advance(const Vector& x_prev, const Vector& x_next, bool check_stagnation) {
    ++iter_;
    if (!x_next.allFinite()) {
        trace_.diverging = true;
        trace_.metadata["stop_reason"] = "non-finite iterate";
        return true;
    }
    double nrm = x_next.norm();
    if (check_stagnation && (x_next - x_prev).norm() <= stop_.stagnation_tol * (1.0 + x_prev.norm())) {
        trace_.stagnated = true;
        trace_.metadata["stop_reason"] = "stagnation";
        return true;
    }
    if (nrm > stop_.divergence_guard * (1.0 + x0_norm_) && nrm > last_norm_) {
        trace_.diverging = true;
        trace_.metadata["stop_reason"] = "divergence guard";
        return true;
    }
    last_norm_ = nrm;
    if (iter_ >= stop_.max_iter) {
        trace_.metadata["stop_reason"] = "max_iter";
        return true;
    }
    return false;
}

IterTrace TraceRecorder::finish(const Vector& x_final) {
    trace_.x = x_final;
    trace_.iterations = iter_;
    if (trace_.snapshot_iters.empty() || trace_.snapshot_iters.back() != iter_) {
        trace_.snapshot_iters.push_back(iter_);
        trace_.snapshots.push_back(x_final);
    }
    return std::move(trace_);
}

namespace {

void put_double(std::ostream& os, double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, res.ptr - buf);
}

}  // namespace

void write_trace_csv(const IterTrace& trace, std::ostream& os, bool include_timing) {
    os << "iter,residual,objective,wall_ms\n";
    for (std::size_t i = 0; i < trace.residuals.size(); ++i) {
        os << i << ',';
        put_double(os, trace.residuals[i]);
        os << ',';
        if (i < trace.objective.size()) put_double(os, trace.objective[i]);
        os << ',';
        if (include_timing && i < trace.wall_ms.size()) put_double(os, trace.wall_ms[i]);
        os << '\n';
    }
}

// ---- block schedules ----------------------------------------------------

BlockSchedule BlockSchedule::full(std::size_t m) {
    if (m == 0) throw std::invalid_argument("BlockSchedule: m must be positive");
    BlockSchedule s;
    s.kind_ = Kind::Full;
    s.m_ = m;
    s.window_ = 1;
    return s;
}

BlockSchedule BlockSchedule::round_robin(std::size_t m, std::size_t block_size) {
    if (m == 0 || block_size == 0) throw std::invalid_argument("BlockSchedule: sizes must be positive");
    BlockSchedule s;
    s.kind_ = Kind::RoundRobin;
    s.m_ = m;
    s.block_size_ = std::min(block_size, m);
    s.window_ = (m + s.block_size_ - 1) / s.block_size_;
    return s;
}

BlockSchedule BlockSchedule::random_subset(std::size_t m, double p, std::size_t window, std::uint64_t seed) {
    if (m == 0 || window == 0) throw std::invalid_argument("BlockSchedule: sizes must be positive");
    if (!(p > 0 && p <= 1)) throw std::invalid_argument("BlockSchedule: p must lie in (0,1]");
    BlockSchedule s;
    s.kind_ = Kind::Random;
    s.m_ = m;
    s.p_ = p;
    s.window_ = window;
    s.rng_ = Rng(seed);
    s.last_seen_.assign(m, 0);
    return s;
}

BlockSchedule BlockSchedule::cyclic_sets(std::size_t m, std::vector<std::vector<std::size_t>> sets, std::size_t window) {
    if (m == 0 || sets.empty() || window == 0) throw std::invalid_argument("BlockSchedule: empty set list");
    for (const auto& st : sets)
        for (std::size_t i : st)
            if (i >= m) throw std::invalid_argument("BlockSchedule: index out of range");
    BlockSchedule s;
    s.kind_ = Kind::Sets;
    s.m_ = m;
    s.window_ = window;
    s.sets_ = std::move(sets);
    return s;
}

std::vector<std::size_t> BlockSchedule::next() {
    std::vector<std::size_t> act;
    switch (kind_) {
        case Kind::Full:
            for (std::size_t i = 0; i < m_; ++i) act.push_back(i);
            break;
        case Kind::RoundRobin: {
            std::size_t start = (n_ % window_) * block_size_;
            for (std::size_t i = start; i < std::min(m_, start + block_size_); ++i) act.push_back(i);
            break;
        }
        case Kind::Random: {
            // last_seen_ counts iterations since the index was last active.
            for (std::size_t i = 0; i < m_; ++i) {
                bool pick = rng_.bernoulli(p_);
                if (last_seen_[i] + 1 >= window_) pick = true;
                if (pick) act.push_back(i);
            }
            if (act.empty()) act.push_back(rng_.index(m_));
            std::vector<bool> on(m_, false);
            for (std::size_t i : act) on[i] = true;
            for (std::size_t i = 0; i < m_; ++i) last_seen_[i] = on[i] ? 0 : last_seen_[i] + 1;
            break;
        }
        case Kind::Sets: act = sets_[n_ % sets_.size()]; break;
    }
    ++n_;
    return act;
}

CoverageMonitor::CoverageMonitor(std::size_t m, std::size_t window) : window_(window), last_(m) {}

std::optional<std::size_t> CoverageMonitor::observe(const std::vector<std::size_t>& active) {
    for (std::size_t i : active) {
        if (i >= last_.size()) throw std::invalid_argument("CoverageMonitor: index out of range");
        last_[i] = n_;
    }
    std::optional<std::size_t> missing;
    if (n_ + 1 >= window_) {
        for (std::size_t i = 0; i < last_.size(); ++i) {
            if (!last_[i] || n_ - *last_[i] >= window_) {
                missing = i;
                break;
            }
        }
    }
    ++n_;
    return missing;
}

// ---- drivers ------------------------------------------------------------

namespace {

double require_averaged(const OperatorRef& T, const char* rule) {
    auto a = T.tag().averaged_constant();
    if (!a) throw PreconditionError(rule, "operator tagged " + T.tag().describe() + " is not nonexpansive");
    return *a;
}

void require_schedule(double alpha, const RelaxationSchedule& s, const StopRule& stop) {
    auto v = validate_relaxation_schedule(alpha, s, std::min<std::size_t>(stop.max_iter, 10000));
    if (!v.valid) throw PreconditionError("relaxation sequence", v.reason);
}

void copy_warnings(IterTrace& t, const OperatorRef& T) {
    for (const auto& w : T.warnings()) t.warnings.push_back(w);
}

}  // namespace

IterTrace banach_picard(const OperatorRef& T, const Vector& x0, const StopRule& stop) {
    const auto& tag = T.tag();
    bool contraction = tag.kind() == RegKind::Contraction ||
                       (tag.kind() == RegKind::Lipschitz && tag.constant() < 1.0);
    if (!contraction) throw PreconditionError("Banach contraction", "operator tagged " + tag.describe());
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    while (true) {
        Vector tx = T(x);
        if (rec.check((tx - x).norm(), x)) break;
        bool halt = rec.advance(x, tx);
        x = std::move(tx);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    t.metadata["delta"] = std::to_string(tag.constant());
    return t;
}

IterTrace km_iterate(const OperatorRef& T, const RelaxationSchedule& schedule, const Vector& x0, const StopRule& stop) {
    double alpha = require_averaged(T, "Krasnosel'skii-Mann");
    require_schedule(alpha, schedule, stop);
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    for (std::size_t n = 0;; ++n) {
        Vector tx = T(x);
        if (rec.check((tx - x).norm(), x)) break;
        Vector xn = x + schedule.at(n) * (tx - x);
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    copy_warnings(t, T);
    t.metadata["alpha"] = std::to_string(alpha);
    t.metadata["schedule"] = schedule.describe();
    return t;
}

double composite_km_lambda_max(double a1, double a2, double eps) {
    double an = (a1 + a2 - 2.0 * a1 * a2) / (1.0 - a1 * a2);
    return (1.0 - eps) * (1.0 + eps * an) / an;
}

IterTrace composite_km(const std::function<OperatorRef(std::size_t)>& T1_seq,
                       const std::function<OperatorRef(std::size_t)>& T2_seq, const RelaxationSchedule& lambda,
                       const Vector& x0, const StopRule& stop, CompositeKmOptions opt) {
    if (!(opt.eps > 0 && opt.eps < 1)) throw std::invalid_argument("composite_km: eps must lie in (0,1)");
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    const double cap = 1.0 / (1.0 + opt.eps);
    for (std::size_t n = 0;; ++n) {
        OperatorRef T1 = T1_seq(n), T2 = T2_seq(n);
        double a1 = require_averaged(T1, "composite iteration"), a2 = require_averaged(T2, "composite iteration");
        std::string problem;
        if (a1 > cap || a2 > cap) problem = "averagedness constants must not exceed 1/(1+eps)";
        double l = lambda.at(n);
        double lmax = problem.empty() ? composite_km_lambda_max(a1, a2, opt.eps) : 0.0;
        if (problem.empty() && (l < opt.eps || l > lmax)) {
            std::ostringstream os;
            os << "lambda_" << n << " = " << l << " outside [" << opt.eps << ", " << lmax << "]";
            problem = os.str();
        }
        if (!problem.empty()) {
            if (n == 0) throw PreconditionError("composite relaxation band", problem);
            IterTrace t = rec.finish(x);
            t.status = Status::PreconditionViolated;
            t.metadata["violation"] = problem;
            return t;
        }
        Vector tx = T1(T2(x));
        if (rec.check((tx - x).norm(), x)) break;
        Vector xn = x + l * (tx - x);
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    return rec.finish(x);
}

std::vector<double> cycle_residuals(const std::vector<OperatorRef>& ops, const std::vector<Vector>& limits) {
    const std::size_t m = ops.size();
    if (limits.size() != m) throw std::invalid_argument("cycle_residuals: size mismatch");
    std::vector<double> r(m);
    for (std::size_t i = 0; i < m; ++i) r[i] = (limits[i] - ops[i](limits[(i + 1) % m])).norm();
    return r;
}

CycleResult cyclic_iterate(const std::vector<OperatorRef>& ops, const Vector& x0, const StopRule& stop) {
    if (ops.empty()) throw std::invalid_argument("cyclic_iterate: empty operator list");
    for (const auto& T : ops) {
        double a = require_averaged(T, "cyclic sweep");
        if (a >= 1.0) throw PreconditionError("cyclic sweep", "operator '" + T.name() + "' lacks an averagedness constant < 1");
        if (T.dim() != x0.size()) throw DimensionError("cyclic_iterate: dimension mismatch");
    }
    const std::size_t m = ops.size();
    auto sweep = [&ops, m](const Vector& x) {
        Vector y = x;
        for (std::size_t k = m; k-- > 0;) y = ops[k](y);
        return y;
    };
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    while (true) {
        Vector y = sweep(x);
        if (rec.check((y - x).norm(), x)) break;
        bool halt = rec.advance(x, y);
        x = std::move(y);
        if (halt) break;
    }
    CycleResult out;
    out.trace = rec.finish(x);
    out.limits.assign(m, Vector());
    out.limits[0] = x;
    if (m > 1) {
        out.limits[m - 1] = ops[m - 1](x);
        for (std::size_t i = m - 1; i-- > 1;) out.limits[i] = ops[i](out.limits[i + 1]);
    }
    out.residuals = cycle_residuals(ops, out.limits);
    for (const auto& T : ops) copy_warnings(out.trace, T);
    return out;
}

IterTrace block_update_iterate(const OperatorRef& T0, const std::vector<OperatorRef>& Ts,
                               const std::vector<double>& weights, BlockSchedule schedule, const Vector& x0,
                               const std::vector<Vector>& t_init, const StopRule& stop) {
    const std::size_t m = Ts.size();
    if (m == 0 || weights.size() != m || t_init.size() != m || schedule.m() != m)
        throw std::invalid_argument("block_update_iterate: operator, weight, t_init and schedule sizes differ");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w > 0)) throw std::invalid_argument("block_update_iterate: weights must be positive");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-12) throw std::invalid_argument("block_update_iterate: weights must sum to 1");
    require_averaged(T0, "block-update iteration");
    for (const auto& T : Ts) require_averaged(T, "block-update iteration");

    CoverageMonitor cover(m, schedule.window());
    std::vector<Vector> t = t_init;
    std::deque<double> steps;
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    while (true) {
        auto active = schedule.next();
        if (auto miss = cover.observe(active)) {
            IterTrace tr = rec.finish(x);
            tr.status = Status::PreconditionViolated;
            tr.metadata["violation"] = "index " + std::to_string(*miss) + " not used within " +
                                       std::to_string(schedule.window()) + " consecutive iterations";
            return tr;
        }
        parallel_for(active.size(), [&](std::size_t k) { t[active[k]] = Ts[active[k]](x); });
        Vector s = Vector::Zero(x.size());
        for (std::size_t i = 0; i < m; ++i) s += weights[i] * t[i];
        Vector xn = T0(s);
        // Stale entries can pause x for an iteration, so the residual is the largest step
        // over the last window.
        steps.push_back((xn - x).norm());
        if (steps.size() > schedule.window()) steps.pop_front();
        double r = *std::max_element(steps.begin(), steps.end());
        bool full_window = steps.size() == schedule.window();
        bool halt = rec.advance(x, xn, false);
        x = std::move(xn);
        if (rec.check(r, x, full_window) || halt) break;
    }
    IterTrace tr = rec.finish(x);
    tr.metadata["window"] = std::to_string(schedule.window());
    return tr;
}

IterTrace stochastic_km(const OperatorRef& T, const RelaxationSchedule& schedule, const ErrorSource& errors,
                        const Vector& x0, Rng& rng, const StopRule& stop, bool summability_declared) {
    double alpha = require_averaged(T, "stochastic Krasnosel'skii-Mann");
    require_schedule(alpha, schedule, stop);
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    double weighted_error = 0.0;
    for (std::size_t n = 0;; ++n) {
        Vector tx = T(x);
        if (rec.check((tx - x).norm(), x)) break;
        Vector e = errors ? errors(n, rng) : Vector::Zero(x.size());
        double l = schedule.at(n);
        weighted_error += l * e.norm();
        Vector xn = x + l * (tx + e - x);
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    t.seed = rng.seed();
    t.metadata["summability"] = summability_declared ? "declared" : "undeclared";
    t.metadata["weighted_error_sum"] = std::to_string(weighted_error);
    if (!summability_declared)
        t.warnings.push_back({"summability-undeclared", "error summability was not declared; no convergence claim"});
    return t;
}

IterTrace random_block_km(const OperatorRef& T, const std::vector<Index>& block_dims, const RelaxationSchedule& lambda,
                          const std::vector<double>& probs, const Vector& x0, Rng& rng, const StopRule& stop,
                          RandomBlockOptions opt) {
    double alpha = require_averaged(T, "random block-coordinate iteration");
    if (probs.size() != block_dims.size() || probs.empty())
        throw std::invalid_argument("random_block_km: one activation probability per block required");
    Index total = 0;
    for (Index d : block_dims) total += d;
    if (total != T.dim() || x0.size() != total) throw DimensionError("random_block_km: block dimensions do not match");
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (!(probs[i] > 0 && probs[i] <= 1))
            throw PreconditionError("activation probabilities",
                                    "probability of block " + std::to_string(i) + " must lie in (0,1]");
    const double lo = opt.eps, hi = 1.0 / alpha - opt.eps;
    std::vector<Index> offs(block_dims.size(), 0);
    for (std::size_t i = 1; i < offs.size(); ++i) offs[i] = offs[i - 1] + block_dims[i - 1];

    TraceRecorder rec(stop, x0);
    Vector x = x0;
    std::vector<char> on(probs.size());
    for (std::size_t n = 0;; ++n) {
        double l = lambda.at(n);
        if (l < lo || l > hi) {
            std::ostringstream os;
            os << "lambda_" << n << " = " << l << " outside [" << lo << ", " << hi << "]";
            if (n == 0) throw PreconditionError("random block relaxation band", os.str());
            IterTrace t = rec.finish(x);
            t.status = Status::PreconditionViolated;
            t.metadata["violation"] = os.str();
            return t;
        }
        Vector tx = T(x);
        if (rec.check((tx - x).norm(), x)) break;
        bool any = false;
        while (!any) {
            for (std::size_t i = 0; i < probs.size(); ++i) {
                on[i] = rng.bernoulli(probs[i]) ? 1 : 0;
                any = any || on[i];
            }
        }
        Vector xn = x;
        for (std::size_t i = 0; i < probs.size(); ++i)
            if (on[i]) xn.segment(offs[i], block_dims[i]) += l * (tx - x).segment(offs[i], block_dims[i]);
        bool halt = rec.advance(x, xn, false);
        x = std::move(xn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    t.seed = rng.seed();
    return t;
}

IterTrace hybrid_steepest_descent(const OperatorRef& T, const std::function<Vector(const Vector&)>& grad_g,
                                  const SteepestSchedule& alpha, const Vector& x0, const StopRule& stop) {
    require_averaged(T, "hybrid steepest descent");
    if (!grad_g) throw std::invalid_argument("hybrid_steepest_descent: gradient required");
    if (!alpha.custom && !(alpha.a > 0 && alpha.a <= 1))
        throw PreconditionError("steepest-descent step sequence", "a must lie in (0,1] so that alpha_n = a/(n+1) is in [0,1]");
    TraceRecorder rec(stop, x0);
    Vector x = x0;
    for (std::size_t n = 0;; ++n) {
        Vector tx = T(x);
        Vector xn = tx - alpha.at(n) * grad_g(tx);
        double r = (xn - x).norm();
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (rec.check(r, x) || halt) break;
    }
    IterTrace t = rec.finish(x);
    if (alpha.custom)
        t.warnings.push_back({"schedule-unvalidated", "custom step sequence: summability conditions not checked"});
    return t;
}

}  // namespace splitfix
