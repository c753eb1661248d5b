#include "splitfix/applications.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "splitfix/checks.hpp"
#include "splitfix/errors.hpp"

namespace splitfix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Index> offsets_of(const std::vector<Index>& dims) {
    std::vector<Index> off(dims.size() + 1, 0);
    for (std::size_t i = 0; i < dims.size(); ++i) off[i + 1] = off[i] + dims[i];
    return off;
}

void require_schedule(double alpha, const RelaxationSchedule& s, const char* rule) {
    auto v = validate_relaxation_schedule(alpha, s);
    if (!v.valid) throw PreconditionError(rule, v.reason);
}

std::string fmt_open_band(double g, double hi) {
    std::ostringstream os;
    os << "gamma = " << g << " outside (0, " << hi << ")";
    return os.str();
}

double sq_norm(const LinMap& L) {
    double s = spectral_norm(L.to_matrix());
    return s * s;
}

bool is_zero_function(const FunctionDescriptor& f) {
    auto* l1 = std::get_if<L1Fn>(&f.variant());
    return l1 && l1->weight == 0.0;
}

// Strong convexity modulus known from the catalog; 0 when none is known.
double strong_convexity(const FunctionDescriptor& f) {
    const auto& v = f.variant();
    if (std::holds_alternative<SqNormHalfFn>(v)) return 1.0;
    if (auto* q = std::get_if<QuadraticFitFn>(&v)) {
        Matrix G = q->H.transpose() * q->H;
        return std::max(0.0, sym_eig(0.5 * (G + G.transpose())).values(0)) + q->kappa;
    }
    return 0.0;
}

double min_sym_eig(const Matrix& M) { return sym_eig(0.5 * (M + M.transpose())).values(0); }

bool symmetric(const Matrix& M) {
    if (M.rows() != M.cols()) return false;
    double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    return (M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale;
}

double log1p_exp(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double loss_derivative(Loss loss, double t, double eta) {
    if (loss == Loss::Square) return t - eta;
    return 1.0 / (1.0 + std::exp(-t)) - eta;
}

double loss_curvature(Loss loss) { return loss == Loss::Square ? 1.0 : 0.25; }

}  // namespace

// ---- feasibility --------------------------------------------------------------

void FeasibilitySpec::validate() const {
    if (sets.empty()) throw std::invalid_argument("FeasibilitySpec: no sets");
    if (!maps.empty() && maps.size() != sets.size())
        throw DimensionError("FeasibilitySpec: maps must be empty or one per set");
    if (!weights.empty()) {
        if (weights.size() != sets.size()) throw DimensionError("FeasibilitySpec: one weight per set");
        double s = 0.0;
        for (double w : weights) {
            if (!(w > 0)) throw std::invalid_argument("FeasibilitySpec: weights must be positive");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("FeasibilitySpec: weights must sum to 1");
    }
    for (std::size_t i = 0; i < maps.size(); ++i)
        if (maps[i] && maps[i]->out_dim() != sets[i].dim())
            throw DimensionError("FeasibilitySpec: map range differs from its set");
}

std::vector<double> FeasibilitySpec::resolved_weights() const {
    if (!weights.empty()) return weights;
    return std::vector<double>(sets.size(), 1.0 / static_cast<double>(sets.size()));
}

PocsResult pocs(const FeasibilitySpec& spec, const Vector& x0, PocsMode mode, const StopRule& stop) {
    spec.validate();
    for (const auto& m : spec.maps)
        if (m) throw std::invalid_argument("pocs: linear maps belong to split_feasibility");
    std::vector<OperatorRef> ops;
    for (const auto& s : spec.sets) {
        if (s.dim() != x0.size()) throw DimensionError("pocs: set dimension differs from x0");
        ops.push_back(projection_op(s));
    }
    PocsResult out;
    if (mode == PocsMode::Barycentric) {
        out.trace = km_iterate(combine(spec.resolved_weights(), ops), RelaxationSchedule::constant(1.0), x0, stop);
        out.trace.metadata["mode"] = "barycentric";
    } else {
        CycleResult c = cyclic_iterate(ops, x0, stop);
        out.trace = c.trace;
        out.trace.metadata["mode"] = "sequential";
        out.cycle = std::move(c);
    }
    for (const auto& s : spec.sets) out.max_distance = std::max(out.max_distance, distance(s, out.trace.x));

    if (mode == PocsMode::Sequential) {
        // Sweep limits away from the intersection: report the cycle instead of a common point.
        if (out.trace.status == Status::Converged && out.max_distance > std::sqrt(stop.residual_tol)) {
            out.trace.warnings.push_back({"inconsistent-sets", "sequential projections settled on a cycle; max distance " +
                                                                   std::to_string(out.max_distance)});
            out.trace.metadata["rerouted"] = "cycles";
        } else {
            out.cycle.reset();
        }
    }
    return out;
}

IterTrace split_feasibility(const SetDescriptor& C, const SetDescriptor& D, const LinMap& L, double gamma,
                            const RelaxationSchedule& lambda, const Vector& x0, const StopRule& stop) {
    if (C.dim() != L.in_dim() || D.dim() != L.out_dim() || x0.size() != L.in_dim())
        throw DimensionError("split_feasibility: dimension mismatch");
    double l2 = sq_norm(L);
    if (l2 == 0.0) throw std::invalid_argument("split_feasibility: L is the zero map");
    if (!(gamma > 0 && gamma < 2.0 / l2)) throw PreconditionError("split feasibility step", fmt_open_band(gamma, 2.0 / l2));

    OperatorRef toward_D(
        L.in_dim(),
        [L, D, gamma](const Vector& x) -> Vector {
            Vector lx = L.apply(x);
            return x - gamma * L.apply_adjoint(lx - project(D, lx));
        },
        RegularityTag::averaged(gamma * l2 / 2.0), "Id - g L*(Id - P_D)L");
    IterTrace t = km_iterate(compose({projection_op(C), toward_D}), lambda, x0, stop);
    t.metadata["gamma"] = std::to_string(gamma);
    return t;
}

IterTrace inconsistent_feasibility(const FeasibilitySpec& spec, double gamma, BlockSchedule schedule,
                                   const Vector& x0, const StopRule& stop) {
    spec.validate();
    if (!spec.hard) throw std::invalid_argument("inconsistent_feasibility: hard constraint set required");
    const Index n = x0.size();
    if (spec.hard->dim() != n) throw DimensionError("inconsistent_feasibility: hard set dimension differs from x0");
    const std::size_t m = spec.sets.size();

    std::vector<SmoothTerm> fs;
    std::vector<double> lips;
    for (std::size_t i = 0; i < m; ++i) {
        LinMap L = (spec.maps.empty() || !spec.maps[i]) ? LinMap::identity(n) : *spec.maps[i];
        if (L.in_dim() != n || L.out_dim() != spec.sets[i].dim())
            throw DimensionError("inconsistent_feasibility: target " + std::to_string(i) + " shape mismatch");
        double l2 = sq_norm(L);
        if (l2 == 0.0) throw std::invalid_argument("inconsistent_feasibility: zero map");
        SetDescriptor D = spec.sets[i];
        fs.push_back({[L, D](const Vector& x) -> Vector {
                          Vector lx = L.apply(x);
                          return L.apply_adjoint(lx - project(D, lx));
                      },
                      l2, {}});
        lips.push_back(l2);
    }
    double hi = 2.0 / *std::max_element(lips.begin(), lips.end());
    if (!(gamma > 0 && gamma < hi)) throw PreconditionError("least-squares feasibility step", fmt_open_band(gamma, hi));

    std::vector<Vector> t0;
    for (const auto& f : fs) t0.push_back(x0 - gamma * f.grad(x0));
    auto w = spec.resolved_weights();
    IterTrace t = block_update_fb(FunctionDescriptor::indicator(*spec.hard), fs, w, std::move(schedule), gamma, x0,
                                  t0, stop);
    double obj = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        LinMap L = (spec.maps.empty() || !spec.maps[i]) ? LinMap::identity(n) : *spec.maps[i];
        double d = distance(spec.sets[i], L.apply(t.x));
        obj += 0.5 * w[i] * d * d;
    }
    t.metadata["objective"] = std::to_string(obj);
    return t;
}

// ---- estimation -------------------------------------------------------------------

double regression_loss(Loss loss, double t, double eta) {
    if (loss == Loss::Square) return 0.5 * (t - eta) * (t - eta);
    return log1p_exp(t) - eta * t;
}

double regression_objective(const Matrix& A, const Vector& eta, double alpha, Loss loss, const Vector& x) {
    Vector t = A * x;
    double s = alpha * x.lpNorm<1>();
    for (Index i = 0; i < t.size(); ++i) s += regression_loss(loss, t(i), eta(i));
    return s;
}

Loss parse_loss(const std::string& name) {
    if (name == "square") return Loss::Square;
    if (name == "logistic") return Loss::Logistic;
    throw std::invalid_argument("unknown loss '" + name + "' (expected square or logistic)");
}

IterTrace lasso_logistic(const Matrix& A, const Vector& eta, double alpha, const Vector& x0,
                         const RegressionOptions& opt, const StopRule& stop) {
    if (A.rows() != eta.size() || A.cols() != x0.size()) throw DimensionError("lasso_logistic: dimension mismatch");
    if (!(alpha >= 0)) throw std::invalid_argument("lasso_logistic: alpha must be nonnegative");
    const Index m = A.rows(), n = A.cols();
    if (m == 0) throw std::invalid_argument("lasso_logistic: no rows");
    const Loss loss = opt.loss;
    const double mu = loss_curvature(loss);
    auto objective = [A, eta, alpha, loss](const Vector& x) { return regression_objective(A, eta, alpha, loss, x); };

    if (opt.backend == Backend::ForwardBackward) {
        double lip = mu * spectral_norm(A) * spectral_norm(A);
        auto grad = [A, eta, loss](const Vector& x) -> Vector {
            Vector t = A * x;
            for (Index i = 0; i < t.size(); ++i) t(i) = loss_derivative(loss, t(i), eta(i));
            return A.transpose() * t;
        };
        std::optional<double> beta = lip > 0 ? std::optional<double>(1.0 / lip) : std::optional<double>(kInf);
        InclusionProblem p{MonotoneOp::subdifferential(FunctionDescriptor::l1(alpha), n),
                           MonotoneOp::single_valued(n, grad, beta, lip, "loss gradient"), std::nullopt};
        SplitOptions so;
        if (opt.gamma) so.gamma = *opt.gamma;
        so.lambda = opt.lambda;
        so.objective = objective;
        IterTrace t = forward_backward(p, x0, so, stop);
        t.metadata["backend"] = "forward-backward";
        return t;
    }

    // Each row enters with weight 1/m, so its term is scaled by m.
    const double scale = static_cast<double>(m);
    std::vector<SmoothTerm> fs;
    double lmax = 0.0;
    for (Index i = 0; i < m; ++i) {
        Vector a = A.row(i).transpose();
        double a2 = a.squaredNorm();
        if (a2 == 0.0) throw std::invalid_argument("lasso_logistic: row " + std::to_string(i) + " is zero");
        double e = eta(i);
        fs.push_back({[a, e, loss, scale](const Vector& x) -> Vector { return scale * loss_derivative(loss, a.dot(x), e) * a; },
                      scale * mu * a2, {}});
        lmax = std::max(lmax, scale * mu * a2);
    }
    double g = opt.gamma.value_or(1.0 / lmax);
    std::vector<Vector> t0;
    for (const auto& f : fs) t0.push_back(x0 - g * f.grad(x0));
    BlockSchedule sched = opt.schedule.value_or(BlockSchedule::full(static_cast<std::size_t>(m)));
    IterTrace t = block_update_fb(FunctionDescriptor::l1(alpha), fs,
                                  std::vector<double>(static_cast<std::size_t>(m), 1.0 / scale), std::move(sched), g,
                                  x0, t0, stop);
    t.metadata["backend"] = "block-update";
    t.metadata["objective"] = std::to_string(objective(t.x));
    return t;
}

// ---- matrix problems ----------------------------------------------------------------

double prox_neg_log(double gamma, double xi) { return 0.5 * (xi + std::sqrt(xi * xi + 4.0 * gamma)); }

double glasso_objective(const Matrix& O, double chi, const Matrix& X) {
    auto e = sym_eig(0.5 * (X + X.transpose()));
    if (e.values(0) <= 0) return kInf;
    return chi * X.cwiseAbs().sum() - e.values.array().log().sum() + (O * X).trace();
}

IterTrace graphical_lasso(const Matrix& O, double chi, double gamma, const RelaxationSchedule& lambda,
                          const Matrix& Y0, const StopRule& stop) {
    if (!symmetric(O)) throw std::invalid_argument("graphical_lasso: O must be symmetric");
    if (Y0.rows() != O.rows() || Y0.cols() != O.cols()) throw DimensionError("graphical_lasso: Y0 shape differs from O");
    if (!(chi >= 0)) throw std::invalid_argument("graphical_lasso: chi must be nonnegative");
    if (!(gamma > 0)) throw PreconditionError("Douglas-Rachford step", "gamma must be positive");
    require_schedule(0.5, lambda, "Douglas-Rachford relaxation");
    const Index N = O.rows();

    auto x_of = [&](const Matrix& Y, double* min_eig) -> Matrix {
        Matrix W = Y - gamma * O;
        auto e = sym_eig(0.5 * (W + W.transpose()));
        Vector mu(N);
        for (Index i = 0; i < N; ++i) mu(i) = prox_neg_log(gamma, e.values(i));
        if (min_eig) *min_eig = std::min(*min_eig, mu.minCoeff());
        return e.vectors * mu.asDiagonal() * e.vectors.transpose();
    };

    TraceRecorder rec(stop, flatten_rowmajor(Y0), [O, chi, N](const Vector& x) {
        return glasso_objective(O, chi, unflatten_rowmajor(x, N, N));
    });
    double min_eig = kInf;
    Matrix Y = Y0;
    for (std::size_t n = 0;; ++n) {
        Matrix X = x_of(Y, &min_eig);
        Matrix Z = (2.0 * X - Y).unaryExpr([&](double v) { return soft_threshold(v, gamma * chi); });
        if (rec.check((Z - X).norm(), flatten_rowmajor(X))) break;
        Matrix Yn = Y + lambda.at(n) * (Z - X);
        bool halt = rec.advance(flatten_rowmajor(Y), flatten_rowmajor(Yn));
        Y = std::move(Yn);
        if (halt) break;
    }
    IterTrace t = rec.finish(flatten_rowmajor(x_of(Y, &min_eig)));
    t.metadata["rows"] = std::to_string(N);
    t.metadata["min_eigenvalue"] = std::to_string(min_eig);
    return t;
}

double rpca_objective(double chi, const Matrix& X, const Matrix& Y) {
    return svd(Y).singular_values.sum() + chi * X.cwiseAbs().sum();
}

RpcaResult robust_pca(const Matrix& O, double chi, double gamma, const RelaxationSchedule& lambda,
                      const StopRule& stop) {
    if (!(chi > 0)) throw std::invalid_argument("robust_pca: chi must be positive");
    const Index r = O.rows(), c = O.cols(), k = r * c;
    const Vector o = flatten_rowmajor(O);

    // (X, Y) stacked; the constraint X + Y = O is the set V.
    auto nuc = FunctionDescriptor::nuclear(1.0, r, c);
    auto F = FunctionDescriptor::custom(
        [chi, nuc, k](double g, const Vector& v) -> Vector {
            Vector out(2 * k);
            out << soft_threshold(Vector(v.head(k)), g * chi), prox(nuc, g, v.tail(k));
            return out;
        },
        [chi, nuc, k](const Vector& v) { return chi * v.head(k).lpNorm<1>() + value(nuc, v.tail(k)); }, "rpca");
    auto V = SetDescriptor::custom(
        2 * k,
        [o, k](const Vector& v) -> Vector {
            Vector d = 0.5 * (o - v.head(k) - v.tail(k));
            Vector out(2 * k);
            out << v.head(k) + d, v.tail(k) + d;
            return out;
        },
        "X + Y = O");
    InclusionProblem p{MonotoneOp::subdifferential(F, 2 * k), MonotoneOp::normal_cone(V), std::nullopt};
    SplitOptions so;
    so.gamma = gamma;
    so.lambda = lambda;
    so.objective = [F](const Vector& v) { return value(F, v); };
    Vector y0 = Vector::Zero(2 * k);
    y0.head(k) = o;

    RpcaResult out;
    out.trace = douglas_rachford(p, y0, so, stop);
    out.X = unflatten_rowmajor(out.trace.x.head(k), r, c);
    out.Y = unflatten_rowmajor(out.trace.x.tail(k), r, c);
    out.trace.metadata["rows"] = std::to_string(r);
    out.trace.metadata["cols"] = std::to_string(c);
    return out;
}

double completion_objective(const Matrix& O, const Matrix& mask, double chi, const Matrix& X) {
    Matrix d = mask.cwiseProduct(X) - mask.cwiseProduct(O);
    return 0.5 * d.squaredNorm() + chi * svd(X).singular_values.sum();
}

IterTrace matrix_completion(const Matrix& O, const Matrix& mask, double chi, const StepSize& gamma,
                            const std::optional<RelaxationSchedule>& lambda, const Matrix& X0, const StopRule& stop) {
    if (O.rows() != mask.rows() || O.cols() != mask.cols() || X0.rows() != O.rows() || X0.cols() != O.cols())
        throw DimensionError("matrix_completion: shape mismatch");
    if (!(chi >= 0)) throw std::invalid_argument("matrix_completion: chi must be nonnegative");
    for (Index i = 0; i < mask.size(); ++i)
        if (mask.data()[i] != 0.0 && mask.data()[i] != 1.0)
            throw std::invalid_argument("matrix_completion: mask entries must be 0 or 1");
    const Index r = O.rows(), c = O.cols(), k = r * c;
    const Vector m = flatten_rowmajor(mask);
    const Vector om = m.cwiseProduct(flatten_rowmajor(O));

    InclusionProblem p{
        MonotoneOp::subdifferential(FunctionDescriptor::nuclear(chi, r, c), k),
        MonotoneOp::single_valued(k, [m, om](const Vector& x) -> Vector { return m.cwiseProduct(x) - om; }, 1.0, 1.0,
                                  "P_V X - O"),
        std::nullopt};
    SplitOptions so;
    so.gamma = gamma;
    so.lambda = lambda;
    so.objective = [O, mask, chi, r, c](const Vector& x) {
        return completion_objective(O, mask, chi, unflatten_rowmajor(x, r, c));
    };
    IterTrace t = forward_backward(p, flatten_rowmajor(X0), so, stop);
    t.metadata["rows"] = std::to_string(r);
    t.metadata["cols"] = std::to_string(c);
    return t;
}

// ---- cycles -----------------------------------------------------------------------------

CycleResult projection_cycles(const std::vector<SetDescriptor>& sets, const Vector& x0, const StopRule& stop) {
    if (sets.size() < 2) throw std::invalid_argument("projection_cycles: at least two sets required");
    std::vector<OperatorRef> ops;
    for (const auto& s : sets) ops.push_back(projection_op(s));
    return cyclic_iterate(ops, x0, stop);
}

CycleResult proximal_cycles(const std::vector<FunctionDescriptor>& phis, const Vector& x0, const StopRule& stop) {
    if (phis.size() < 2) throw std::invalid_argument("proximal_cycles: at least two functions required");
    std::vector<OperatorRef> ops;
    for (const auto& f : phis) ops.push_back(prox_op(f, 1.0, x0.size()));
    return cyclic_iterate(ops, x0, stop);
}

// ---- games ----------------------------------------------------------------------------------

Index GameSpec::total_dim() const {
    Index s = 0;
    for (Index d : dims) s += d;
    return s;
}

void GameSpec::validate() const {
    if (dims.empty()) throw std::invalid_argument("GameSpec: no players");
    if (psi.size() != dims.size() || partial.size() != dims.size())
        throw DimensionError("GameSpec: psi and partial gradients need one entry per player");
    if (!loss.empty() && loss.size() != dims.size()) throw DimensionError("GameSpec: one loss per player");
    if (!best_response.empty() && best_response.size() != dims.size())
        throw DimensionError("GameSpec: one best-response oracle per player");
    for (Index d : dims)
        if (d < 1) throw DimensionError("GameSpec: player dimensions must be positive");
    if (lipschitz && !(*lipschitz > 0)) throw std::invalid_argument("GameSpec: Lipschitz constant must be positive");
    if (cocoercive && !(*cocoercive > 0)) throw std::invalid_argument("GameSpec: cocoercivity constant must be positive");
}

Vector GameSpec::coupling(const Vector& profile) const {
    auto off = offsets_of(dims);
    Vector out(off.back());
    for (std::size_t i = 0; i < dims.size(); ++i) {
        Vector gi = partial[i](profile);
        if (gi.size() != dims[i]) throw DimensionError("GameSpec: partial gradient has the wrong size");
        out.segment(off[i], dims[i]) = gi;
    }
    return out;
}

namespace {

Vector blockwise_prox(const GameSpec& game, double g, const Vector& x) {
    auto off = offsets_of(game.dims);
    Vector out(x.size());
    for (std::size_t i = 0; i < game.dims.size(); ++i)
        out.segment(off[i], game.dims[i]) = prox(game.psi[i], g, x.segment(off[i], game.dims[i]));
    return out;
}

}  // namespace

PrimalDualTrace nash_fbf(const GameSpec& game, const StepSize& gamma, double eps, const Vector& x0, const Vector& v0,
                         const StopRule& stop) {
    game.validate();
    const Index N = game.total_dim();
    if (x0.size() != N || v0.size() != N) throw DimensionError("nash_fbf: profile dimension mismatch");
    if (!game.lipschitz) throw PreconditionError("game step band", "coupling has no declared Lipschitz constant");
    const double delta = *game.lipschitz;
    if (!(eps > 0 && eps < 1.0 / (2.0 + delta)))
        throw std::invalid_argument("nash_fbf: eps must lie in (0, 1/(2 + delta))");
    const double lo = eps, hi = (1.0 - eps) / (1.0 + delta);
    auto off = offsets_of(game.dims);

    TraceRecorder rec(stop, x0);
    std::vector<Vector> duals;
    Vector x = x0, v = v0;
    double kp = 0.0, kd = 0.0;
    for (std::size_t n = 0;; ++n) {
        double g = gamma.at(n, lo, hi);
        if (!(g >= lo && g <= hi)) {
            std::ostringstream os;
            os << "gamma_" << n << " = " << g << " outside [" << lo << ", " << hi << "]";
            if (n == 0) throw PreconditionError("game step band", os.str());
            IterTrace t = rec.finish(x);
            t.status = Status::PreconditionViolated;
            t.metadata["violation"] = os.str();
            t.metadata["rule"] = "game step band";
            while (duals.size() < t.snapshots.size()) duals.push_back(v);
            PrimalDualTrace out{std::move(t), v, std::move(duals), kp, kd};
            return out;
        }
        Vector y = x - g * (game.coupling(x) + v);
        Vector p = prox(game.f, g, y);
        Vector q(N);
        for (std::size_t i = 0; i < game.dims.size(); ++i) {
            auto xi = x.segment(off[i], game.dims[i]);
            auto vi = v.segment(off[i], game.dims[i]);
            q.segment(off[i], game.dims[i]) = vi + g * (xi - prox(game.psi[i], 1.0 / g, Vector(vi / g + xi)));
        }
        kp = (p - x).norm();
        kd = (q - v).norm();
        bool conv = rec.check(std::sqrt(kp * kp + kd * kd), x);
        while (duals.size() < rec.trace().snapshots.size()) duals.push_back(v);
        if (conv) break;
        Vector xn = x - y + p - g * (game.coupling(p) + q);
        Vector vn = q + g * (p - x);
        Vector prev(2 * N), next(2 * N);
        prev << x, v;
        next << xn, vn;
        bool halt = rec.advance(prev, next);
        x = std::move(xn);
        v = std::move(vn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    while (duals.size() < t.snapshots.size()) duals.push_back(v);
    return PrimalDualTrace{std::move(t), v, std::move(duals), kp, kd};
}

IterTrace nash_dy(const GameSpec& game, double gamma, const RelaxationSchedule& lambda, const Vector& y0,
                  const StopRule& stop) {
    game.validate();
    const Index N = game.total_dim();
    if (y0.size() != N) throw DimensionError("nash_dy: profile dimension mismatch");
    if (!game.cocoercive) throw PreconditionError("three-operator step", "coupling has no declared cocoercivity constant");
    GameSpec gs = game;
    MonotoneOp players(N, [gs](double g, const Vector& y) { return blockwise_prox(gs, g, y); }, {}, std::nullopt,
                       std::nullopt, "player penalties");
    auto C = MonotoneOp::single_valued(N, [gs](const Vector& x) { return gs.coupling(x); }, game.cocoercive,
                                       game.lipschitz.value_or(1.0 / *game.cocoercive), "coupling");
    InclusionProblem p{MonotoneOp::subdifferential(game.f, N), players, C};
    SplitOptions so;
    so.gamma = gamma;
    so.lambda = lambda;
    return davis_yin(p, y0, so, stop);
}

GameSpec chain_game(const std::vector<Matrix>& L, const std::vector<Vector>& o,
                    const std::vector<FunctionDescriptor>& psi, const std::vector<SetDescriptor>& C) {
    const std::size_t m = L.size();
    if (m < 2) throw std::invalid_argument("chain_game: at least two players");
    if (o.size() != m || psi.size() != m || C.size() != m) throw DimensionError("chain_game: one entry per player");
    GameSpec g;
    double lmax = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (L[i].rows() != L[0].rows() || o[i].size() != L[0].rows()) throw DimensionError("chain_game: range mismatch");
        if (C[i].dim() != L[i].cols()) throw DimensionError("chain_game: constraint set dimension mismatch");
        g.dims.push_back(L[i].cols());
        double s = spectral_norm(L[i]);
        lmax = std::max(lmax, s * s);
    }
    auto off = offsets_of(g.dims);
    auto dims = g.dims;
    g.psi = psi;
    auto mix = [L, o, off, dims, m](std::size_t i, const Vector& x) -> Vector {
        std::size_t j = (i + 1) % m;
        return L[i] * x.segment(off[i], dims[i]) + L[j] * x.segment(off[j], dims[j]) - o[i];
    };
    for (std::size_t i = 0; i < m; ++i) {
        g.partial.push_back([mix, L, i](const Vector& x) -> Vector { return L[i].transpose() * mix(i, x); });
        g.loss.push_back([mix, psi, C, off, dims, i](const Vector& x) {
            Vector xi = x.segment(off[i], dims[i]);
            double v = value(psi[i], xi) + 0.5 * mix(i, x).squaredNorm();
            return distance(C[i], xi) <= 1e-9 * (1.0 + xi.norm()) ? v : kInf;
        });
    }
    g.f = FunctionDescriptor::custom(
        [C, off, dims](double, const Vector& x) -> Vector {
            Vector out(x.size());
            for (std::size_t i = 0; i < dims.size(); ++i)
                out.segment(off[i], dims[i]) = project(C[i], x.segment(off[i], dims[i]));
            return out;
        },
        [C, off, dims](const Vector& x) {
            for (std::size_t i = 0; i < dims.size(); ++i) {
                Vector xi = x.segment(off[i], dims[i]);
                if (distance(C[i], xi) > 1e-9 * (1.0 + xi.norm())) return kInf;
            }
            return 0.0;
        },
        "product constraint");
    // With every L_i zero the coupling vanishes and any constant is valid.
    g.cocoercive = lmax > 0 ? 1.0 / (2.0 * lmax) : 1.0;
    g.lipschitz = 1.0 / *g.cocoercive;
    return g;
}

GameSpec bilinear_game(double c1, double c2, const Matrix& M, const SetDescriptor& C1, const SetDescriptor& C2) {
    if (!(c1 >= 0 && c2 >= 0)) throw std::invalid_argument("bilinear_game: curvatures must be nonnegative");
    const Index n1 = M.cols(), n2 = M.rows();
    if (C1.dim() != n1 || C2.dim() != n2) throw DimensionError("bilinear_game: set dimension mismatch");
    GameSpec g;
    g.dims = {n1, n2};
    g.psi = {FunctionDescriptor::indicator(C1), FunctionDescriptor::indicator(C2)};
    g.partial.push_back([M, c1, n1, n2](const Vector& x) -> Vector {
        return c1 * x.head(n1) + M.transpose() * x.tail(n2);
    });
    g.partial.push_back([M, c2, n1, n2](const Vector& x) -> Vector { return c2 * x.tail(n2) - M * x.head(n1); });
    auto inside = [](const SetDescriptor& S, const Vector& v) { return distance(S, v) <= 1e-9 * (1.0 + v.norm()); };
    g.loss.push_back([M, c1, n1, n2, C1, inside](const Vector& x) {
        Vector a = x.head(n1), b = x.tail(n2);
        return inside(C1, a) ? 0.5 * c1 * a.squaredNorm() + (M * a).dot(b) : kInf;
    });
    g.loss.push_back([M, c2, n1, n2, C2, inside](const Vector& x) {
        Vector a = x.head(n1), b = x.tail(n2);
        return inside(C2, b) ? 0.5 * c2 * b.squaredNorm() - (M * a).dot(b) : kInf;
    });
    g.lipschitz = std::max(c1, c2) + spectral_norm(M);
    if (!(*g.lipschitz > 0)) g.lipschitz = 1.0;  // the zero map is Lipschitz with any constant
    return g;
}

double golden_section_min(const std::function<double(double)>& h, double start) {
    const double h0 = h(start);
    if (!std::isfinite(h0)) throw std::invalid_argument("golden_section_min: start outside the domain");
    double s = 1.0 + std::abs(start);
    bool bracketed = false;
    for (int k = 0; k < 80; ++k, s *= 2.0) {
        if (h(start - s) >= h0 && h(start + s) >= h0) {
            bracketed = true;
            break;
        }
    }
    if (!bracketed) throw std::runtime_error("golden_section_min: no minimizer found (unbounded below?)");
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = start - s, b = start + s;
    double c = b - r * (b - a), d = a + r * (b - a);
    double hc = h(c), hd = h(d);
    for (int k = 0; k < 400 && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++k) {
        bool go_left = hc < hd || (!std::isfinite(hc) && !std::isfinite(hd) && start < c);
        if (go_left) {
            b = d;
            d = c;
            hd = hc;
            c = b - r * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + r * (b - a);
            hd = h(d);
        }
    }
    double best = 0.5 * (a + b);
    return h(best) <= h0 ? best : start;
}

std::vector<double> best_response_residual(const GameSpec& game, const Vector& profile) {
    game.validate();
    if (game.loss.empty()) throw std::invalid_argument("best_response_residual: game has no player losses");
    if (profile.size() != game.total_dim()) throw DimensionError("best_response_residual: profile dimension mismatch");
    auto off = offsets_of(game.dims);
    std::vector<double> out;
    for (std::size_t i = 0; i < game.dims.size(); ++i) {
        const auto& h = game.loss[i];
        double at = h(profile);
        Vector alt = profile;
        if (!game.best_response.empty() && game.best_response[i]) {
            alt.segment(off[i], game.dims[i]) = game.best_response[i](profile);
        } else if (game.dims[i] == 1) {
            auto line = [&](double t) {
                Vector z = profile;
                z(off[i]) = t;
                return h(z);
            };
            alt(off[i]) = golden_section_min(line, profile(off[i]));
        } else {
            throw std::invalid_argument("best_response_residual: no oracle for player " + std::to_string(i + 1) +
                                        " (dimension " + std::to_string(game.dims[i]) + ")");
        }
        out.push_back(std::max(0.0, at - h(alt)));
    }
    return out;
}

// ---- plug-and-play -------------------------------------------------------------------------

IterTrace pnp_fb(const PnpModel& model, double gamma, const RelaxationSchedule& lambda, const Vector& x0,
                 const StopRule& stop) {
    const Index n = x0.size();
    if (model.Q.dim() != n) throw DimensionError("pnp_fb: denoiser dimension differs from x0");
    OperatorRef step = forward_step(MonotoneOp::gradient_of(model.f, n), gamma);
    std::optional<double> alpha;
    std::string composed = model.Q.tag().describe();
    if (model.Q.tag().averaged_constant()) {
        OperatorRef T = compose({model.Q, step});
        alpha = T.tag().averaged_constant();
        composed = T.tag().describe();
    }
    bool certified = alpha && *alpha < 1.0;
    if (certified) require_schedule(*alpha, lambda, "plug-and-play relaxation");

    TraceRecorder rec(stop, x0);
    Vector x = x0;
    for (std::size_t k = 0;; ++k) {
        Vector w = model.Q(step(x));
        if (rec.check((w - x).norm(), x)) break;
        Vector xn = x + lambda.at(k) * (w - x);
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    if (certified) {
        t.metadata["alpha"] = std::to_string(*alpha);
    } else {
        t.warnings.push_back({"no-convergence-claim", "Q o (Id - g grad f) is tagged " + composed +
                                                          "; no averagedness constant below 1"});
    }
    for (const auto& w : model.Q.warnings()) t.warnings.push_back(w);
    return t;
}

IterTrace pnp_dr(const PnpModel& model, double gamma, const RelaxationSchedule& lambda, const Vector& y0,
                 const StopRule& stop) {
    const Index n = y0.size();
    if (model.Q.dim() != n) throw DimensionError("pnp_dr: denoiser dimension differs from y0");
    OperatorRef P = prox_op(model.f, gamma, n);
    auto aq = model.Q.tag().averaged_constant();
    bool certified = aq && *aq <= 0.5;
    if (certified) {
        // (2Q - Id) o (2P - Id) is nonexpansive; lambda_n / 2 must be a 1-relaxation sequence.
        auto half = RelaxationSchedule::function([lambda](std::size_t k) { return 0.5 * lambda.at(k); }, "lambda/2");
        auto v = validate_relaxation_schedule(1.0, half);
        if (!v.valid) throw PreconditionError("plug-and-play Douglas-Rachford relaxation", v.reason);
    }

    TraceRecorder rec(stop, y0);
    Vector y = y0;
    for (std::size_t k = 0;; ++k) {
        Vector x = P(y);
        Vector w = model.Q(2.0 * x - y);
        if (rec.check((w - x).norm(), x)) break;
        Vector yn = y + lambda.at(k) * (w - x);
        bool halt = rec.advance(y, yn);
        y = std::move(yn);
        if (halt) break;
    }
    IterTrace t = rec.finish(P(y));
    if (!certified)
        t.warnings.push_back({"no-convergence-claim", "denoiser tagged " + model.Q.tag().describe() +
                                                          " is not firmly nonexpansive; reflection is not certified"});
    return t;
}

PnpAdmmResult pnp_admm(const PnpModel& model, double gamma, const Vector& y0, const Vector& z0, const StopRule& stop) {
    const Index n = y0.size();
    if (model.Q.dim() != n || z0.size() != n) throw DimensionError("pnp_admm: dimension mismatch");
    if (!(gamma > 0)) throw std::invalid_argument("pnp_admm: gamma must be positive");
    TraceRecorder rec(stop, y0);
    Vector y = y0, z = z0, x = model.Q(y - z);
    while (true) {
        x = model.Q(y - z);
        Vector yn = prox(model.f, gamma, x + z);
        Vector zn = z + x - yn;
        bool conv = rec.check(std::sqrt((x - yn).squaredNorm() + (yn - y).squaredNorm()), x);
        if (conv) break;
        Vector prev(2 * n), next(2 * n);
        prev << y, z;
        next << yn, zn;
        bool halt = rec.advance(prev, next);
        y = std::move(yn);
        z = std::move(zn);
        if (halt) break;
    }
    PnpAdmmResult out{rec.finish(x), y, z};
    return out;
}

// ---- adjoint mismatch ----------------------------------------------------------------------------

void MismatchSpec::validate() const {
    if (K.in_dim() != H.out_dim() || K.out_dim() != H.in_dim()) throw DimensionError("MismatchSpec: K must map G to H");
    if (y.size() != H.out_dim()) throw DimensionError("MismatchSpec: observation size differs from the range of H");
    if (!(kappa >= 0)) throw std::invalid_argument("MismatchSpec: kappa must be nonnegative");
}

Matrix MismatchSpec::assembled() const {
    Matrix L = K.to_matrix() * H.to_matrix();
    L.diagonal().array() += kappa;
    return L;
}

MismatchResult mismatched_fb(const MismatchSpec& spec, const StepSize& gamma,
                             const std::optional<RelaxationSchedule>& lambda, const Vector& x0, const StopRule& stop) {
    spec.validate();
    const Index n = spec.H.in_dim();
    if (x0.size() != n) throw DimensionError("mismatched_fb: x0 dimension mismatch");
    const Matrix L = spec.assembled();
    const double zeta_half = min_sym_eig(L);
    if (!(zeta_half > 0))
        throw PreconditionError("adjoint mismatch cocoercivity",
                                "minimum eigenvalue of (L + L^T)/2 is " + std::to_string(zeta_half) + ", must be > 0");
    const double lnorm = spectral_norm(L);
    const Vector ky = spec.K.apply(spec.y);

    SplitOptions so;
    so.gamma = gamma;
    so.lambda = lambda;
    auto A = MonotoneOp::subdifferential(spec.f, n);
    InclusionProblem surrogate{A,
                               MonotoneOp::single_valued(n, [L, ky](const Vector& x) -> Vector { return L * x - ky; },
                                                         zeta_half / (lnorm * lnorm), lnorm, "K H x + kappa x - K y"),
                               std::nullopt};
    MismatchResult out;
    out.trace = forward_backward(surrogate, x0, so, stop);
    out.x_tilde = out.trace.x;

    const Matrix Hm = spec.H.to_matrix();
    const double hnorm = spectral_norm(Hm);
    const Vector y = spec.y;
    const double kappa = spec.kappa;
    InclusionProblem exact{A,
                           MonotoneOp::single_valued(
                               n, [Hm, y, kappa](const Vector& x) -> Vector { return Hm.transpose() * (Hm * x - y) + kappa * x; },
                               1.0 / (hnorm * hnorm + kappa), hnorm * hnorm + kappa, "H^T(Hx - y) + kappa x"),
                           std::nullopt};
    SplitOptions eo;
    eo.lambda = lambda;
    IterTrace ref = forward_backward(exact, x0, eo, stop);

    BiasReport& b = out.bias;
    b.x_hat = ref.x;
    b.difference = (out.x_tilde - b.x_hat).norm();
    Vector misfit = Hm * b.x_hat - y;
    Vector term = spec.H.apply_adjoint(misfit) - spec.K.apply(misfit);
    b.residual_term = term.norm();
    const double nu_g = std::max(0.0, min_sym_eig(Hm.transpose() * Hm)) + kappa;
    b.chi_full = 1.0 / (nu_g + 2.0 * zeta_half);
    b.chi_half = 1.0 / (strong_convexity(spec.f) + zeta_half);
    b.bound_full = b.chi_full * b.residual_term;
    b.bound_half = b.chi_half * b.residual_term;
    b.predicted_difference = L.lu().solve(term);
    b.exact_relation_applies = is_zero_function(spec.f);
    if (ref.status != Status::Converged)
        out.trace.warnings.push_back({"reference-not-converged", "exact-adjoint solve stopped with status " +
                                                                     to_string(ref.status)});
    return out;
}

// ---- nonlinear observations ---------------------------------------------------------------

namespace {

Vector apply_S(const Observation& o, const Vector& g) { return o.S ? o.S(g) : g; }

}  // namespace

void ObservationSpec::register_checks() const {
    if (dim < 1) throw DimensionError("ObservationSpec: dimension must be positive");
    if (obs.empty()) throw std::invalid_argument("ObservationSpec: no observations");
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const Observation o = obs[k];
        if (!o.R) throw std::invalid_argument("ObservationSpec: observation " + std::to_string(k + 1) + " has no R");
        if (o.R(Vector::Zero(dim)).size() != o.r.size())
            throw DimensionError("ObservationSpec: r_" + std::to_string(k + 1) + " size differs from the range of R");
        OperatorRef SR(dim, [o](const Vector& x) { return apply_S(o, o.R(x)); }, RegularityTag::firmly_nonexpansive(),
                       "S o R");
        auto rep = check_firmly_nonexpansive(SR, check_pairs, check_seed + k, 1e-9);
        if (!rep.passed) {
            std::ostringstream os;
            os << "S o R for observation " << (o.name.empty() ? std::to_string(k + 1) : o.name)
               << " failed the sampled firm nonexpansiveness test (worst violation " << rep.worst << ")";
            throw PreconditionError("proxifiability", os.str());
        }
    }
}

IterTrace nonlinear_observation_solve(const ObservationSpec& spec, const Vector& x0, const StopRule& stop) {
    if (x0.size() != spec.dim) throw DimensionError("nonlinear_observation_solve: x0 dimension mismatch");
    spec.register_checks();
    std::vector<OperatorRef> Ts;
    for (const auto& o : spec.obs) {
        Vector shift = apply_S(o, o.r);
        Ts.emplace_back(spec.dim, [o, shift](const Vector& x) -> Vector { return shift + x - apply_S(o, o.R(x)); },
                        RegularityTag::firmly_nonexpansive(), o.name.empty() ? "T_k" : o.name);
    }
    IterTrace t = cyclic_iterate(Ts, x0, stop).trace;
    double worst = 0.0;
    for (const auto& o : spec.obs) worst = std::max(worst, (o.R(t.x) - o.r).norm());
    t.metadata["observation_residual"] = std::to_string(worst);
    return t;
}

}  // namespace splitfix
