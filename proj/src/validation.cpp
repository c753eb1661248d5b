#include "splitfix/validation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "splitfix/applications.hpp"
#include "splitfix/checks.hpp"
#include "splitfix/fixtures.hpp"
#include "splitfix/netanalysis.hpp"
#include "splitfix/splitting.hpp"

namespace splitfix {

namespace {

struct Check {
    std::string module, name, fault;
    std::function<CheckOutcome(bool broken)> run;
};

CheckOutcome outcome(bool passed, std::string inequality, double worst, std::string detail = {}) {
    CheckOutcome c;
    c.passed = passed;
    c.inequality = std::move(inequality);
    c.worst = worst;
    c.detail = std::move(detail);
    return c;
}

Vector vec2(double a, double b) { return (Vector(2) << a, b).finished(); }

OperatorRef line_proj(double angle) {
    return projection_op(SetDescriptor::hyperplane(vec2(-std::sin(angle), std::cos(angle)), 0.0));
}

// ---- core-linalg ----

CheckOutcome moreau_identity(bool broken) {
    const FunctionDescriptor fs[] = {FunctionDescriptor::l1(0.7), FunctionDescriptor::sq_norm_half(),
                                     FunctionDescriptor::indicator(SetDescriptor::box(Vector::Constant(3, -1),
                                                                                      Vector::Constant(3, 2)))};
    Rng rng(3);
    double worst = 0.0;
    for (const auto& f : fs) {
        for (int k = 0; k < 100; ++k) {
            Vector x = 3.0 * rng.normal_vector(3);
            Vector p = prox(f, 1.0, x);
            if (broken) p.array() += 1e-6;
            worst = std::max(worst, (p + prox_conjugate(f, 1.0, x) - x).norm());
        }
    }
    return outcome(worst <= 1e-10, "||prox_f x + prox_{f*} x - x|| <= 1e-10", worst, "l1, 1/2||.||^2, box indicator");
}

CheckOutcome adjoint_consistency(bool) {
    Rng rng(4);
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
        LinMap L = LinMap::from_matrix(rng.normal_matrix(3 + k, 4));
        worst = std::max(worst, adjoint_check(L, 50, 10 + k));
    }
    return outcome(worst <= 1e-10, "|<Lx, y> - <x, L*y>| <= 1e-10 (1 + ||x|| ||y||)", worst);
}

CheckOutcome eigen_reconstruction(bool) {
    Rng rng(5);
    Matrix G = rng.normal_matrix(5, 5);
    Matrix S = G + G.transpose();
    auto e = sym_eig(S);
    double err = (e.vectors * e.values.asDiagonal() * e.vectors.transpose() - S).norm();
    bool sorted = true;
    for (Index i = 1; i < e.values.size(); ++i) sorted = sorted && e.values(i - 1) <= e.values(i);
    return outcome(err <= 1e-10 && sorted, "||U diag(w) U^T - S||_F <= 1e-10, w ascending", err);
}

// ---- op-algebra ----

CheckOutcome averaged_constants(bool broken) {
    Matrix M = (Matrix(2, 2) << 2, 1, 1, 3).finished();
    auto B = MonotoneOp::linear(M);  // symmetric PD: cocoercive with 1/lambda_max
    std::vector<std::pair<std::string, OperatorRef>> ops = {
        {"compose", compose({line_proj(0.0), line_proj(1.0)})},
        {"combine", combine({0.3, 0.7}, {relax(line_proj(0.2), 1.5), line_proj(2.0)})},
        {"relax", relax(line_proj(0.3), 1.5)},
        {"forward_step", forward_step(B, 0.4)},
        {"three_composite", three_composite(projection_op(SetDescriptor::box(vec2(-1, -1), vec2(1, 1))),
                                            line_proj(0.6), line_proj(2.0))},
    };
    CheckOutcome agg = outcome(true, "||Tx-Ty||^2 <= ||x-y||^2 - (1-a)/a ||(Id-T)x-(Id-T)y||^2", 0.0);
    std::ostringstream detail;
    for (auto& [name, T] : ops) {
        double a = *T.tag().averaged_constant();
        if (broken) a *= 0.6;
        auto r = check_averaged(T, a, 500, 17, 1e-10);
        agg.passed = agg.passed && r.passed;
        agg.worst = std::max(agg.worst, r.worst);
        detail << name << " a=" << a << (r.passed ? " ok; " : " VIOLATED; ");
    }
    agg.detail = detail.str();
    return agg;
}

CheckOutcome two_projection_composite(bool) {
    auto T = compose({line_proj(0.0), line_proj(1.0)});
    double a = T.tag().constant();
    return outcome(a == 2.0 / 3.0, "composite of two firmly nonexpansive maps has constant 2/3", std::abs(a - 2.0 / 3.0));
}

// ---- drivers ----

CheckOutcome banach_rate(bool broken) {
    OperatorRef T(1, [](const Vector& x) -> Vector { return 0.5 * x + Vector::Ones(1); }, RegularityTag::contraction(0.5));
    StopRule s;
    s.max_iter = 40;
    s.residual_tol = 1e-300;
    s.snapshot_every = 1;
    auto t = banach_picard(T, Vector::Constant(1, 10.0), s);
    const double rate = broken ? 0.25 : 0.5;
    double worst = -1.0;
    for (std::size_t i = 0; i < t.snapshots.size(); ++i) {
        double n = static_cast<double>(t.snapshot_iters[i]);
        double gap = std::abs(t.snapshots[i](0) - 2.0) - std::pow(rate, n) * 8.0 * (1 + 1e-10);
        worst = std::max(worst, gap);
    }
    return outcome(worst <= 0, "|x_n - 2| <= 8 * 2^-n (1 + 1e-10)", worst);
}

CheckOutcome km_fejer(bool broken) {
    OperatorRef R(2, [](const Vector& x) -> Vector { return vec2(-x(1), x(0)); }, RegularityTag::nonexpansive(), "rotation");
    double worst = 0.0;
    bool converged = true;
    Rng rng(20);
    for (int k = 0; k < 20; ++k) {
        Vector x = 5.0 * rng.normal_vector(2);
        double prev = x.norm();
        const double lam = broken ? 2.5 : 0.5;
        for (int n = 0; n < 10000 && x.norm() > 1e-9; ++n) {
            x = x + lam * (R(x) - x);
            worst = std::max(worst, x.norm() - prev - 1e-12);
            prev = x.norm();
        }
        converged = converged && (R(x) - x).norm() <= 1e-8;
    }
    return outcome(worst <= 0 && converged, "||x_{n+1}|| <= ||x_n|| + 1e-12 and ||Rx - x|| <= 1e-8", worst);
}

// ---- splitting ----

CheckOutcome lasso_agreement(bool) {
    auto fx = seeded_lasso();
    const Index n = fx.H.cols();
    auto l1 = FunctionDescriptor::l1(fx.alpha);
    auto fit = FunctionDescriptor::quadratic_fit(fx.H, fx.o);
    StopRule s;
    s.max_iter = 200000;
    s.residual_tol = 1e-12;
    Vector x0 = Vector::Zero(n);
    auto a = forward_backward({MonotoneOp::subdifferential(l1, n), MonotoneOp::gradient_of(fit, n), std::nullopt}, x0, {}, s);
    auto b = douglas_rachford({MonotoneOp::subdifferential(l1, n), MonotoneOp::subdifferential(fit, n), std::nullopt}, x0, {}, s);
    auto c = tseng_fbf({MonotoneOp::subdifferential(l1, n), MonotoneOp::gradient_of(fit, n), std::nullopt}, x0, {}, s);
    double fa = fx.objective(a.x), fb = fx.objective(b.x), fc = fx.objective(c.x);
    double spread = std::max({fa, fb, fc}) - std::min({fa, fb, fc});
    return outcome(spread <= 1e-6, "forward-backward, Douglas-Rachford and Tseng objectives agree to 1e-6", spread);
}

// ---- applications ----

CheckOutcome glasso_pd(bool) {
    Rng rng(3);
    Matrix G = rng.normal_matrix(6, 4);
    Matrix O = G.transpose() * G / 6.0;
    StopRule s;
    s.max_iter = 100000;
    s.residual_tol = 1e-10;
    s.snapshot_every = 1;
    auto t = graphical_lasso(O, 0.1, 0.5, RelaxationSchedule::constant(1.0), Matrix::Zero(4, 4), s);
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& x : t.snapshots) {
        Matrix X = unflatten_rowmajor(x, 4, 4);
        worst = std::min(worst, sym_eig(0.5 * (X + X.transpose())).values(0));
    }
    return outcome(worst > 0, "lambda_min(X_n) > 0 for every iterate", -worst);
}

CheckOutcome cycle_residuals_check(bool) {
    StopRule s;
    s.residual_tol = 1e-12;
    auto c = projection_cycles({SetDescriptor::ball(vec2(0, 0), 1), SetDescriptor::ball(vec2(4, 0), 1),
                                SetDescriptor::ball(vec2(2, 3), 1)},
                               vec2(10, 10), s);
    double worst = 0;
    for (double r : c.residuals) worst = std::max(worst, r);
    return outcome(worst <= 1e-8, "||x_i - P_i x_{i+1}|| <= 1e-8", worst);
}

CheckOutcome mismatch_relation(bool) {
    MismatchSpec spec{LinMap::from_matrix(Matrix::Constant(1, 1, 2.0)), LinMap::from_matrix(Matrix::Constant(1, 1, 1.5)),
                      1.0, Vector::Constant(1, 2.0), FunctionDescriptor::zero()};
    StopRule s;
    s.residual_tol = 1e-14;
    auto r = mismatched_fb(spec, StepSize(), std::nullopt, Vector::Zero(1), s);
    double err = ((r.x_tilde - r.bias.x_hat) - r.bias.predicted_difference).norm();
    return outcome(err <= 1e-9, "||(x~ - x^) - L^-1 (H* - K)(H x^ - y)|| <= 1e-9", err);
}

// ---- netanalysis ----

FeedforwardNet seeded_net(Rng& rng, double scale) {
    FeedforwardNet net;
    std::size_t m = 1 + rng.index(4);
    std::vector<Index> w(m + 1);
    for (auto& v : w) v = 1 + static_cast<Index>(rng.index(4));
    const Activation acts[] = {Activation::relu(), Activation::sigmoid(), Activation::softmax(), Activation::identity()};
    for (std::size_t i = 1; i <= m; ++i)
        net.layers.push_back({scale * rng.normal_matrix(w[i], w[i - 1]), rng.normal_vector(w[i]), acts[rng.index(4)]});
    return net;
}

CheckOutcome sandwich(bool broken) {
    Rng rng(2024);
    double worst = -1.0;
    for (int k = 0; k < 50; ++k) {
        auto net = seeded_net(rng, 0.8);
        auto c = lipschitz_certificate(net);
        double bound = broken ? 0.25 * c.lipschitz_bound : c.lipschitz_bound;
        double tol = 1e-10 * (1 + c.upper_bound);
        worst = std::max({worst, c.lower_bound - bound - tol, bound - c.upper_bound - tol});
    }
    return outcome(worst <= 0, "||W|| <= theta_m / 2^(m-1) <= ||W_1|| ... ||W_m||", worst);
}

CheckOutcome sampled_lipschitz(bool broken) {
    Rng rng(77);
    double worst = -1.0;
    for (int k = 0; k < 5; ++k) {
        auto net = seeded_net(rng, 0.8);
        double bound = lipschitz_certificate(net).lipschitz_bound * (broken ? 0.1 : 1.0);
        Rng s(100 + k);
        for (int p = 0; p < 10000; ++p) {
            Vector x = 3.0 * s.normal_vector(net.input_dim());
            Vector y = x + std::pow(10.0, s.uniform(-3, 1)) * s.normal_vector(net.input_dim());
            double d = (x - y).norm();
            if (d > 0) worst = std::max(worst, (net(x) - net(y)).norm() / d - bound * (1 + 1e-9));
        }
    }
    return outcome(worst <= 0, "||Tx - Ty|| <= (theta_m / 2^(m-1)) ||x - y|| (1 + 1e-9)", worst);
}

CheckOutcome activations_fne(bool broken) {
    CheckOutcome agg = outcome(true, "||Rx-Ry||^2 + ||(Id-R)x-(Id-R)y||^2 <= ||x-y||^2", 0.0);
    for (auto a : {Activation::relu(), Activation::sigmoid(), Activation::softmax(), Activation::identity()}) {
        OperatorRef T = a.as_operator(4);
        if (broken && a.kind == Activation::Kind::ReLU)
            T = OperatorRef(4, [a](const Vector& x) -> Vector { return 1.2 * a(x); }, RegularityTag::firmly_nonexpansive());
        auto r = check_firmly_nonexpansive(T, 10000, 9, 1e-10, [](Rng& g) { return Vector(4.0 * g.normal_vector(4)); });
        agg.passed = agg.passed && r.passed;
        agg.worst = std::max(agg.worst, r.worst);
        if (!r.passed) agg.detail += a.name() + " violated; ";
    }
    return agg;
}

CheckOutcome averaged_nets(bool) {
    Rng rng(99);
    CheckOutcome agg = outcome(true, "averagedness test passing => sampled ||Tx-Ty||^2 <= ||x-y||^2 - (1-a)/a ||(Id-T)x-(Id-T)y||^2", 0.0);
    int tested = 0;
    for (int k = 0; k < 20 && tested < 5; ++k) {
        FeedforwardNet net;
        net.layers.push_back({0.25 * rng.normal_matrix(4, 3), rng.normal_vector(4), Activation::relu()});
        net.layers.push_back({0.25 * rng.normal_matrix(3, 4), rng.normal_vector(3), Activation::sigmoid()});
        auto a = smallest_alpha(net);
        if (!a) continue;
        ++tested;
        OperatorRef T(3, [net](const Vector& x) { return net(x); }, RegularityTag::averaged(*a));
        auto r = check_averaged(T, *a, 10000, 40 + k, 1e-9, [](Rng& g) { return Vector(3.0 * g.normal_vector(3)); });
        agg.passed = agg.passed && r.passed;
        agg.worst = std::max(agg.worst, r.worst);
    }
    agg.passed = agg.passed && tested > 0;
    agg.detail = std::to_string(tested) + " certified nets";
    return agg;
}

// ---- cli ----

CheckOutcome deterministic_trace(bool broken) {
    auto fx = seeded_lasso();
    Json p;
    p["problem"] = "lasso";
    p["H"] = to_json(fx.H);
    p["o"] = to_json(fx.o);
    p["alpha"] = fx.alpha;
    p["stop"] = {{"tol", 1e-10}, {"max_iter", 20000}};
    auto csv = [&](int salt) {
        auto out = solve_problem(p);
        if (broken && salt) out.trace.residuals.back() *= 1 + 1e-15;
        std::ostringstream os;
        write_trace_csv(out.trace, os);
        return os.str();
    };
    bool same = csv(0) == csv(1);
    return outcome(same, "identical configuration => byte-identical trace CSV", same ? 0.0 : 1.0);
}

const std::vector<Check>& registry() {
    static const std::vector<Check> checks = {
        {"core-linalg", "moreau-identity", "moreau", moreau_identity},
        {"core-linalg", "adjoint-consistency", "", adjoint_consistency},
        {"core-linalg", "eigen-reconstruction", "", eigen_reconstruction},
        {"op-algebra", "averaged-constants", "averaged-constant", averaged_constants},
        {"op-algebra", "two-projection-composite", "", two_projection_composite},
        {"drivers", "banach-rate", "banach-rate", banach_rate},
        {"drivers", "km-fejer", "fejer", km_fejer},
        {"splitting", "lasso-agreement", "", lasso_agreement},
        {"applications", "glasso-positive-definite", "", glasso_pd},
        {"applications", "cycle-residuals", "", cycle_residuals_check},
        {"applications", "mismatch-relation", "", mismatch_relation},
        {"netanalysis", "sandwich", "sandwich", sandwich},
        {"netanalysis", "sampled-lipschitz", "lipschitz", sampled_lipschitz},
        {"netanalysis", "activations-firmly-nonexpansive", "activation", activations_fne},
        {"netanalysis", "averaged-nets", "", averaged_nets},
        {"cli", "deterministic-trace", "trace-determinism", deterministic_trace},
    };
    return checks;
}

}  // namespace

const std::vector<std::string>& validation_modules() {
    static const std::vector<std::string> m = {"core-linalg", "op-algebra", "drivers", "splitting",
                                               "applications", "netanalysis", "cli"};
    return m;
}

const std::vector<std::string>& validation_faults() {
    static const std::vector<std::string> f = [] {
        std::vector<std::string> out;
        for (const auto& c : registry())
            if (!c.fault.empty()) out.push_back(c.fault);
        return out;
    }();
    return f;
}

std::vector<CheckOutcome> run_validation(const std::string& selector, const std::string& fault) {
    const auto& mods = validation_modules();
    if (selector != "all" && std::find(mods.begin(), mods.end(), selector) == mods.end())
        throw std::invalid_argument("unknown suite '" + selector + "'");
    const auto& faults = validation_faults();
    if (!fault.empty() && std::find(faults.begin(), faults.end(), fault) == faults.end())
        throw std::invalid_argument("unknown fault '" + fault + "'");
    std::vector<CheckOutcome> out;
    for (const auto& c : registry()) {
        if (selector != "all" && c.module != selector) continue;
        CheckOutcome r;
        try {
            r = c.run(!fault.empty() && c.fault == fault);
        } catch (const std::exception& e) {
            r = outcome(false, "no exception", 0.0, e.what());
        }
        r.module = c.module;
        r.name = c.name;
        out.push_back(std::move(r));
    }
    return out;
}

Json validation_report(const std::vector<CheckOutcome>& results) {
    Json j;
    std::size_t failed = 0;
    Json arr = Json::array();
    for (const auto& r : results) {
        if (!r.passed) ++failed;
        arr.push_back({{"module", r.module},
                       {"check", r.name},
                       {"passed", r.passed},
                       {"inequality", r.inequality},
                       {"worst", r.worst},
                       {"detail", r.detail}});
    }
    j["total"] = results.size();
    j["failed"] = failed;
    j["passed"] = failed == 0;
    j["checks"] = arr;
    return j;
}

}  // namespace splitfix
