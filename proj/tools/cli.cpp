#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "splitfix/applications.hpp"
#include "splitfix/errors.hpp"
#include "splitfix/io.hpp"
#include "splitfix/netanalysis.hpp"
#include "splitfix/parallel.hpp"
#include "splitfix/validation.hpp"

namespace splitfix::cli {

namespace {

struct Flags {
    std::optional<double> tol, gamma, lambda;
    std::optional<std::size_t> max_iter;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App& app, Flags& f) {
    app.add_option("--tol", f.tol, "residual tolerance");
    app.add_option("--max-iter", f.max_iter, "iteration cap");
    app.add_option("--seed", f.seed, "seed recorded in the summary and used by randomized runs");
    app.add_option("--gamma", f.gamma, "step size override");
    app.add_option("--lambda", f.lambda, "constant relaxation override");
    app.add_option("--out", f.out, "output directory (solve, demo) or file (analyze-net, validate)");
}

void check_flags(const Flags& f) {
    if (f.tol && !(*f.tol > 0 && std::isfinite(*f.tol))) throw SchemaError("--tol: must be positive");
    if (f.max_iter && *f.max_iter == 0) throw SchemaError("--max-iter: must be >= 1");
    if (f.gamma && !(*f.gamma > 0 && std::isfinite(*f.gamma)))
        throw PreconditionError("step size", "--gamma must be positive and finite");
    if (f.lambda && !(*f.lambda > 0 && std::isfinite(*f.lambda)))
        throw PreconditionError("relaxation", "--lambda must be positive and finite");
}

void apply_threads() {
    const char* v = std::getenv("SPLITFIX_THREADS");
    if (!v || !*v) return;
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 0) throw SchemaError(std::string("SPLITFIX_THREADS: expected a non-negative integer, got '") + v + "'");
    set_thread_cap(static_cast<std::size_t>(n));
}

SolveOverrides overrides(const Flags& f) { return {f.tol, f.max_iter, f.seed, f.gamma, f.lambda}; }

void print_summary(const SolveOutcome& o, std::ostream& out) {
    out << o.summary().dump(2) << '\n';
}

// ---- demos ----

StopRule demo_stop(const Flags& f, double tol = 1e-12, std::size_t max_iter = 200000) {
    StopRule s;
    s.residual_tol = f.tol.value_or(tol);
    s.max_iter = f.max_iter.value_or(max_iter);
    return s;
}

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

std::string fmt(const Vector& v) {
    std::ostringstream os;
    os << std::setprecision(10) << '(';
    for (Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
    os << ')';
    return os.str();
}

SolveOutcome demo_pocs(const Flags& f, std::ostream& out) {
    FeasibilitySpec spec;
    spec.sets = {SetDescriptor::ball(v2(0, 0), 1), SetDescriptor::ball(v2(4, 0), 1), SetDescriptor::ball(v2(2, 3), 1)};
    auto r = pocs(spec, v2(10, 10), PocsMode::Sequential, demo_stop(f));
    out << "three disjoint discs: centres (0,0), (4,0), (2,3), radius 1\n";
    out << "status " << to_string(r.trace.status) << " after " << r.trace.iterations << " sweeps\n";
    if (r.cycle) {
        for (std::size_t i = 0; i < r.cycle->limits.size(); ++i)
            out << "cycle point " << i + 1 << ": " << fmt(r.cycle->limits[i]) << "  residual "
                << r.cycle->residuals[i] << '\n';
    }
    out << "largest distance from the limit to a set: " << r.max_distance << '\n';
    return {"feasibility", r.trace, {{"x", to_json(r.trace.x)}}, 0};
}

SolveOutcome demo_cycles(const Flags& f, std::ostream& out) {
    auto c = projection_cycles({SetDescriptor::interval(0, 1), SetDescriptor::interval(2, 3)}, Vector::Constant(1, -4),
                               demo_stop(f));
    out << "sets [0,1] and [2,3]\n";
    out << "cycle (" << c.limits[0](0) << ", " << c.limits[1](0) << ")\n";
    out << "residuals " << c.residuals[0] << ' ' << c.residuals[1] << '\n';
    return {"cycles", c.trace, {{"x", to_json(c.trace.x)}}, 0};
}

SolveOutcome demo_glasso(const Flags& f, std::ostream& out) {
    Matrix O = v2(2, 4).asDiagonal();
    StopRule s = demo_stop(f);
    s.snapshot_every = 1;
    auto t = graphical_lasso(O, 0.0, f.gamma.value_or(1.0), RelaxationSchedule::constant(f.lambda.value_or(1.0)),
                             Matrix::Identity(2, 2), s);
    Matrix X = unflatten_rowmajor(t.x, 2, 2);
    out << "O = diag(2, 4), chi = 0: X = [[" << X(0, 0) << ", " << X(0, 1) << "], [" << X(1, 0) << ", " << X(1, 1)
        << "]]\n";
    double mn = std::numeric_limits<double>::infinity();
    for (const auto& x : t.snapshots) mn = std::min(mn, sym_eig(unflatten_rowmajor(x, 2, 2)).values(0));
    out << "smallest eigenvalue over all iterates: " << mn << '\n';
    auto sc = graphical_lasso(Matrix::Constant(1, 1, 1.0), 0.5, 1.0, RelaxationSchedule::constant(1.0),
                              Matrix::Constant(1, 1, 1.0), demo_stop(f));
    out << "scalar o = 1, chi = 0.5: x = " << std::setprecision(12) << sc.x(0) << " (2/3 = " << 2.0 / 3.0 << ")\n";
    return {"glasso", t, {{"x", to_json(t.x)}}, 0};
}

SolveOutcome demo_rpca(const Flags& f, std::ostream& out) {
    Rng rng(f.seed.value_or(20240917));
    Matrix O = rng.normal_vector(5) * rng.normal_vector(5).transpose();
    O(0, 3) += 4.0;
    O(2, 1) -= 3.0;
    O(4, 4) += 5.0;
    const double chi = 1.0 / std::sqrt(5.0);
    auto r = robust_pca(O, chi, f.gamma.value_or(1.0), RelaxationSchedule::constant(f.lambda.value_or(1.0)),
                        demo_stop(f, 1e-10, 400000));
    auto sv = svd(r.Y).singular_values;
    int rank = 0;
    for (Index i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-6 * sv(0);
    int nnz = 0;
    for (Index i = 0; i < r.X.size(); ++i) nnz += std::abs(r.X.data()[i]) > 1e-6;
    out << "5x5 rank-one plus three spikes, chi = 1/sqrt(5)\n";
    out << "status " << to_string(r.trace.status) << ", iterations " << r.trace.iterations << ", residual "
        << r.trace.final_residual() << '\n';
    out << "objective " << rpca_objective(chi, r.X, r.Y) << " (all low-rank: " << svd(O).singular_values.sum()
        << ", all sparse: " << chi * O.cwiseAbs().sum() << ")\n";
    out << "low-rank part rank " << rank << ", sparse part nonzeros " << nnz << '\n';
    out << "max |X + Y - O| = " << (r.X + r.Y - O).cwiseAbs().maxCoeff() << '\n';
    return {"rpca", r.trace, {{"x", to_json(r.trace.x)}}, 0};
}

SolveOutcome demo_nash(const Flags& f, std::ostream& out) {
    auto sq = FunctionDescriptor::sq_norm_half();
    auto R = SetDescriptor::whole_space(1);
    Matrix one = Matrix::Ones(1, 1);
    auto game = chain_game({one, one}, {Vector::Zero(1), Vector::Zero(1)}, {sq, sq}, {R, R});
    auto t = nash_dy(game, f.gamma.value_or(*game.cocoercive), RelaxationSchedule::constant(f.lambda.value_or(1.0)),
                     v2(3, -1), demo_stop(f));
    out << "two players, L_i = 1, o_i = 0, psi_i = 1/2|.|^2, beta = " << *game.cocoercive << '\n';
    out << "equilibrium " << fmt(t.x) << " after " << t.iterations << " iterations\n";
    auto br = best_response_residual(game, t.x);
    out << "best-response residuals " << br[0] << ' ' << br[1] << '\n';
    return {"nash", t, {{"x", to_json(t.x)}}, 0};
}

SolveOutcome demo_mismatch(const Flags& f, std::ostream& out) {
    MismatchSpec spec{LinMap::from_matrix(Matrix::Constant(1, 1, 2.0)), LinMap::from_matrix(Matrix::Constant(1, 1, 1.5)),
                      1.0, Vector::Constant(1, 2.0), FunctionDescriptor::zero()};
    auto r = mismatched_fb(spec, StepSize(), std::nullopt, Vector::Zero(1), demo_stop(f, 1e-14));
    double rel = ((r.x_tilde - r.bias.x_hat) - r.bias.predicted_difference).norm();
    out << std::setprecision(12);
    out << "H = 2, K = 1.5, kappa = 1, y = 2\n";
    out << "x_hat = " << r.bias.x_hat(0) << ", x_tilde = " << r.x_tilde(0) << '\n';
    out << "difference " << r.x_tilde(0) - r.bias.x_hat(0) << ", predicted " << r.bias.predicted_difference(0) << '\n';
    out << "exact-relation residual " << rel << '\n';
    out << "chi (g modulus, L + L*) = " << r.bias.chi_full << ", chi (f modulus, (L + L*)/2) = " << r.bias.chi_half << '\n';
    return {"mismatch", r.trace, {{"x", to_json(r.x_tilde)}}, 0};
}

SolveOutcome demo_pnp(const Flags& f, std::ostream& out) {
    const Index n = 4;
    Vector o = (Vector(n) << 1, -2, 0.5, 3).finished();
    OperatorRef Q(n, [](const Vector& x) -> Vector { return 0.5 * x + Vector::Constant(x.size(), 0.5 * x.mean()); },
                  RegularityTag::firmly_nonexpansive(), "smoother");
    const double g = f.gamma.value_or(0.5);
    auto t = pnp_fb({Q, FunctionDescriptor::sq_distance_half(o)}, g, RelaxationSchedule::constant(f.lambda.value_or(1.0)),
                    Vector::Zero(n), demo_stop(f));
    Matrix Qm = 0.5 * Matrix::Identity(n, n) + Matrix::Constant(n, n, 0.5 / n);
    Vector exact = (Matrix::Identity(n, n) - (1 - g) * Qm).lu().solve(g * Qm * o);
    out << "denoiser x/2 + mean(x)/2, data (1, -2, 0.5, 3), gamma " << g << '\n';
    out << "status " << to_string(t.status) << ", iterations " << t.iterations << '\n';
    out << "fixed point " << fmt(t.x) << '\n';
    out << "distance to the linear-solve fixed point " << (t.x - exact).norm() << '\n';
    return {"pnp", t, {{"x", to_json(t.x)}}, 0};
}

using DemoFn = SolveOutcome (*)(const Flags&, std::ostream&);
const std::vector<std::pair<std::string, DemoFn>>& demos() {
    static const std::vector<std::pair<std::string, DemoFn>> d = {
        {"pocs-three-sets", demo_pocs}, {"cycles", demo_cycles},     {"glasso", demo_glasso},
        {"rpca", demo_rpca},            {"nash-n45", demo_nash},     {"mismatch-scalar", demo_mismatch},
        {"pnp-fb", demo_pnp},
    };
    return d;
}

}  // namespace

const std::vector<std::string>& demo_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (auto& [n, fn] : demos()) v.push_back(n);
        return v;
    }();
    return names;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"splitfix: fixed-point and operator-splitting solvers"};
    app.require_subcommand(1);
    Flags flags;

    std::string problem_path, demo_name, net_path, suite = "all", fault;
    auto* solve = app.add_subcommand("solve", "solve a JSON problem file");
    solve->add_option("problem", problem_path, "problem file")->required();
    add_common(*solve, flags);

    auto* demo = app.add_subcommand("demo", "run a named fixture end to end");
    demo->add_option("name", demo_name, "demo name");
    add_common(*demo, flags);

    auto* net = app.add_subcommand("analyze-net", "Lipschitz and averagedness certificate of a network");
    net->add_option("net", net_path, "network JSON file")->required();
    add_common(*net, flags);

    auto* val = app.add_subcommand("validate", "run the invariant suites");
    val->add_option("suite", suite, "all or a module name");
    val->add_option("--inject-fault", fault, "break one check on purpose (harness use)");
    add_common(*val, flags);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        apply_threads();
        check_flags(flags);

        if (solve->parsed()) {
            Json p = load_json_file(problem_path);
            SolveOutcome o = solve_problem(p, overrides(flags));
            if (!flags.out.empty()) write_artifacts(o, flags.out);
            print_summary(o, out);
            return 0;
        }
        if (demo->parsed()) {
            auto it = std::find_if(demos().begin(), demos().end(), [&](auto& d) { return d.first == demo_name; });
            if (it == demos().end()) {
                err << (demo_name.empty() ? "demo name required" : "unknown demo '" + demo_name + "'")
                    << "; available:";
                for (auto& n : demo_names()) err << ' ' << n;
                err << '\n';
                return 2;
            }
            SolveOutcome o = it->second(flags, out);
            if (!flags.out.empty()) write_artifacts(o, flags.out);
            return 0;
        }
        if (net->parsed()) {
            FeedforwardNet nn = json_net(load_json_file(net_path));
            Json j = certificate_json(nn, lipschitz_certificate(nn));
            if (!flags.out.empty()) {
                std::ofstream f(flags.out);
                if (!f) throw std::runtime_error("cannot write " + flags.out);
                f << j.dump(2) << '\n';
            }
            out << j.dump(2) << '\n';
            return 0;
        }
        if (val->parsed()) {
            auto results = run_validation(suite, fault);
            for (const auto& r : results) {
                out << (r.passed ? "PASS " : "FAIL ") << r.module << '/' << r.name;
                if (!r.passed) out << "  violated: " << r.inequality << "  (worst " << r.worst << ") " << r.detail;
                out << '\n';
            }
            Json rep = validation_report(results);
            if (!flags.out.empty()) {
                std::ofstream f(flags.out);
                if (!f) throw std::runtime_error("cannot write " + flags.out);
                f << rep.dump(2) << '\n';
            }
            return rep["passed"].get<bool>() ? 0 : 1;
        }
    } catch (const PreconditionError& e) {
        err << "precondition violated [" << e.rule() << "]: " << e.what() << '\n';
        return 3;
    } catch (const SchemaError& e) {
        err << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace splitfix::cli
