#include "splitfix/operators.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "splitfix/errors.hpp"

namespace splitfix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// Canonical tag for an averagedness constant: 1/2 is firm nonexpansiveness, 1 plain nonexpansiveness.
RegularityTag tag_from_alpha(double alpha) {
    if (std::abs(alpha - 0.5) <= 1e-15) return RegularityTag::firmly_nonexpansive();
    if (alpha >= 1.0 - 1e-15) return RegularityTag::nonexpansive();
    return RegularityTag::averaged(alpha);
}

void require_dim(const Vector& x, Index n, const char* what) {
    if (x.size() != n)
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(n) + ", got " +
                             std::to_string(x.size()));
}

}  // namespace

// ---- tags ---------------------------------------------------------------

RegularityTag RegularityTag::lipschitz(double delta) {
    if (!(delta > 0) || !std::isfinite(delta)) throw std::invalid_argument("Lipschitz constant must be positive");
    return {RegKind::Lipschitz, delta};
}
RegularityTag RegularityTag::nonexpansive() { return {RegKind::Nonexpansive, 1.0}; }
RegularityTag RegularityTag::averaged(double alpha) {
    if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("averaged constant must lie in (0,1)");
    return {RegKind::Averaged, alpha};
}
RegularityTag RegularityTag::firmly_nonexpansive() { return {RegKind::FirmlyNonexpansive, 0.5}; }
RegularityTag RegularityTag::cocoercive(double beta) {
    if (!(beta > 0) || !std::isfinite(beta)) throw std::invalid_argument("cocoercivity constant must be positive");
    return {RegKind::Cocoercive, beta};
}
RegularityTag RegularityTag::contraction(double delta) {
    if (!(delta >= 0 && delta < 1)) throw std::invalid_argument("contraction constant must lie in [0,1)");
    return {RegKind::Contraction, delta};
}

std::optional<double> RegularityTag::averaged_constant() const {
    switch (kind_) {
        case RegKind::FirmlyNonexpansive: return 0.5;
        case RegKind::Averaged: return constant_;
        case RegKind::Nonexpansive: return 1.0;
        case RegKind::Contraction: return (constant_ + 1.0) / 2.0;
        case RegKind::Lipschitz:
            if (constant_ < 1.0) return (constant_ + 1.0) / 2.0;
            if (constant_ == 1.0) return 1.0;
            return std::nullopt;
        case RegKind::Cocoercive:
            if (constant_ >= 1.0) return 0.5;
            return std::nullopt;
    }
    return std::nullopt;
}

std::optional<double> RegularityTag::lipschitz_constant() const {
    switch (kind_) {
        case RegKind::Lipschitz:
        case RegKind::Contraction: return constant_;
        case RegKind::Cocoercive: return 1.0 / constant_;
        default: return 1.0;
    }
}

RegularityTag RegularityTag::weaken() const {
    switch (kind_) {
        case RegKind::FirmlyNonexpansive: return {RegKind::Averaged, 0.5};
        case RegKind::Averaged: return nonexpansive();
        case RegKind::Nonexpansive: return {RegKind::Lipschitz, 1.0};
        case RegKind::Cocoercive: return {RegKind::Lipschitz, 1.0 / constant_};
        case RegKind::Contraction: return {RegKind::Lipschitz, constant_};
        case RegKind::Lipschitz: return *this;
    }
    return *this;
}

std::string RegularityTag::describe() const {
    switch (kind_) {
        case RegKind::Lipschitz: return "Lipschitz(" + fmt(constant_) + ")";
        case RegKind::Nonexpansive: return "Nonexpansive";
        case RegKind::Averaged: return "Averaged(" + fmt(constant_) + ")";
        case RegKind::FirmlyNonexpansive: return "FirmlyNonexpansive";
        case RegKind::Cocoercive: return "Cocoercive(" + fmt(constant_) + ")";
        case RegKind::Contraction: return "Contraction(" + fmt(constant_) + ")";
    }
    return "?";
}

// ---- OperatorRef --------------------------------------------------------

OperatorRef::OperatorRef(Index dim, Fn eval, RegularityTag tag, std::string name)
    : dim_(dim), eval_(std::move(eval)), tag_(tag), name_(std::move(name)) {
    if (dim < 1) throw DimensionError("OperatorRef: dimension must be positive");
    if (!eval_) throw std::invalid_argument("OperatorRef: eval required");
}

Vector OperatorRef::operator()(const Vector& x) const {
    require_dim(x, dim_, name_.empty() ? "OperatorRef" : name_.c_str());
    Vector y = eval_(x);
    require_dim(y, dim_, "OperatorRef result");
    return y;
}

OperatorRef OperatorRef::with_tag(RegularityTag tag) const {
    OperatorRef out = *this;
    out.tag_ = tag;
    return out;
}

OperatorRef& OperatorRef::add_warning(Warning w) {
    warnings_.push_back(std::move(w));
    return *this;
}

OperatorRef identity_op(Index n) {
    return OperatorRef(n, [](const Vector& x) { return x; }, RegularityTag::firmly_nonexpansive(), "Id");
}

// ---- sets ---------------------------------------------------------------

SetDescriptor SetDescriptor::box(Vector lo, Vector hi) {
    if (lo.size() != hi.size() || lo.size() == 0) throw DimensionError("Box: bound sizes differ");
    for (Index i = 0; i < lo.size(); ++i) {
        if (std::isnan(lo(i)) || std::isnan(hi(i))) throw std::invalid_argument("Box: NaN bound");
        if (lo(i) > hi(i)) throw std::invalid_argument("Box: empty (lo > hi)");
    }
    return SetDescriptor(BoxSet{std::move(lo), std::move(hi)});
}

SetDescriptor SetDescriptor::interval(double lo, double hi) {
    return box(Vector::Constant(1, lo), Vector::Constant(1, hi));
}

SetDescriptor SetDescriptor::whole_space(Index n) {
    return box(Vector::Constant(n, -kInf), Vector::Constant(n, kInf));
}

SetDescriptor SetDescriptor::halfspace(Vector a, double b) {
    require_finite(a, "Halfspace");
    if (a.norm() == 0.0) throw std::invalid_argument("Halfspace: normal vector must be nonzero");
    return SetDescriptor(HalfspaceSet{std::move(a), b});
}

SetDescriptor SetDescriptor::hyperplane(Vector a, double b) {
    require_finite(a, "Hyperplane");
    if (a.norm() == 0.0) throw std::invalid_argument("Hyperplane: normal vector must be nonzero");
    return SetDescriptor(HyperplaneSet{std::move(a), b});
}

SetDescriptor SetDescriptor::ball(Vector center, double radius) {
    require_finite(center, "L2Ball");
    if (!(radius >= 0) || !std::isfinite(radius)) throw std::invalid_argument("L2Ball: radius must be >= 0");
    return SetDescriptor(L2BallSet{std::move(center), radius});
}

SetDescriptor SetDescriptor::point(Vector c) { return ball(std::move(c), 0.0); }

SetDescriptor SetDescriptor::affine(Matrix A, Vector c) {
    require_finite(A, "Affine");
    require_finite(c, "Affine");
    if (A.rows() != c.size()) throw DimensionError("Affine: A rows and c size differ");
    Svd s = svd(A);
    const double smax = s.singular_values.size() ? s.singular_values(0) : 0.0;
    Vector inv = Vector::Zero(s.singular_values.size());
    for (Index i = 0; i < inv.size(); ++i)
        if (s.singular_values(i) > 1e-12 * std::max(1.0, smax)) inv(i) = 1.0 / s.singular_values(i);
    auto pinv = std::make_shared<Matrix>(s.V * inv.asDiagonal() * s.U.transpose());
    Vector back = A * (*pinv * c);
    if ((back - c).norm() > 1e-9 * (1.0 + c.norm())) throw std::invalid_argument("Affine: inconsistent system");
    return SetDescriptor(AffineSet{std::move(A), std::move(c), std::move(pinv)});
}

SetDescriptor SetDescriptor::custom(Index dim, std::function<Vector(const Vector&)> projector, std::string name) {
    if (!projector) throw std::invalid_argument("Custom set: projector required");
    return SetDescriptor(CustomSet{dim, std::move(projector), std::move(name)});
}

Index SetDescriptor::dim() const {
    return std::visit(
        [](const auto& s) -> Index {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, BoxSet>) return s.lo.size();
            else if constexpr (std::is_same_v<T, HalfspaceSet> || std::is_same_v<T, HyperplaneSet>) return s.a.size();
            else if constexpr (std::is_same_v<T, L2BallSet>) return s.center.size();
            else if constexpr (std::is_same_v<T, AffineSet>) return s.A.cols();
            else return s.dim;
        },
        v_);
}

std::string SetDescriptor::describe() const {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, BoxSet>) return "Box";
            else if constexpr (std::is_same_v<T, HalfspaceSet>) return "Halfspace";
            else if constexpr (std::is_same_v<T, HyperplaneSet>) return "Hyperplane";
            else if constexpr (std::is_same_v<T, L2BallSet>) return "L2Ball";
            else if constexpr (std::is_same_v<T, AffineSet>) return "Affine";
            else return "Custom(" + s.name + ")";
        },
        v_);
}

Vector project(const SetDescriptor& set, const Vector& x) {
    require_dim(x, set.dim(), "project");
    return std::visit(
        [&x](const auto& s) -> Vector {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, BoxSet>) {
                return x.cwiseMax(s.lo).cwiseMin(s.hi);
            } else if constexpr (std::is_same_v<T, HalfspaceSet>) {
                double excess = s.a.dot(x) - s.b;
                if (excess <= 0) return x;
                return x - (excess / s.a.squaredNorm()) * s.a;
            } else if constexpr (std::is_same_v<T, HyperplaneSet>) {
                return x - ((s.a.dot(x) - s.b) / s.a.squaredNorm()) * s.a;
            } else if constexpr (std::is_same_v<T, L2BallSet>) {
                Vector d = x - s.center;
                double nd = d.norm();
                if (nd <= s.radius) return x;
                return s.center + (s.radius / nd) * d;
            } else if constexpr (std::is_same_v<T, AffineSet>) {
                return x - *s.pinv * (s.A * x - s.c);
            } else {
                Vector p = s.projector(x);
                require_dim(p, s.dim, "custom projector result");
                return p;
            }
        },
        set.variant());
}

double distance(const SetDescriptor& set, const Vector& x) { return (x - project(set, x)).norm(); }

// ---- functions ----------------------------------------------------------

FunctionDescriptor FunctionDescriptor::l1(double weight) {
    if (!(weight >= 0) || !std::isfinite(weight)) throw std::invalid_argument("L1: weight must be >= 0");
    return FunctionDescriptor(L1Fn{weight});
}
FunctionDescriptor FunctionDescriptor::zero() { return l1(0.0); }
FunctionDescriptor FunctionDescriptor::sq_norm_half() { return FunctionDescriptor(SqNormHalfFn{}); }

FunctionDescriptor FunctionDescriptor::quadratic_fit(Matrix H, Vector y, double kappa) {
    require_finite(H, "QuadraticFit");
    require_finite(y, "QuadraticFit");
    if (H.rows() != y.size()) throw DimensionError("QuadraticFit: H rows and y size differ");
    if (!(kappa >= 0)) throw std::invalid_argument("QuadraticFit: kappa must be >= 0");
    return FunctionDescriptor(QuadraticFitFn{std::move(H), std::move(y), kappa});
}

FunctionDescriptor FunctionDescriptor::sq_distance_half(const Vector& o) {
    return quadratic_fit(Matrix::Identity(o.size(), o.size()), o, 0.0);
}

FunctionDescriptor FunctionDescriptor::neg_log_det(Index n) {
    if (n < 1) throw DimensionError("NegLogDet: n must be positive");
    return FunctionDescriptor(NegLogDetFn{n});
}

FunctionDescriptor FunctionDescriptor::nuclear(double weight, Index rows, Index cols) {
    if (!(weight >= 0)) throw std::invalid_argument("Nuclear: weight must be >= 0");
    if (rows < 1 || cols < 1) throw DimensionError("Nuclear: shape must be positive");
    return FunctionDescriptor(NuclearFn{weight, rows, cols});
}

FunctionDescriptor FunctionDescriptor::indicator(SetDescriptor set) { return FunctionDescriptor(IndicatorFn{std::move(set)}); }

FunctionDescriptor FunctionDescriptor::separable(std::function<double(double, double)> p,
                                                 std::function<double(double)> v, std::string name) {
    if (!p) throw std::invalid_argument("SeparableScalar: prox required");
    return FunctionDescriptor(SeparableScalarFn{std::move(p), std::move(v), std::move(name)});
}

FunctionDescriptor FunctionDescriptor::custom(std::function<Vector(double, const Vector&)> p,
                                              std::function<double(const Vector&)> v, std::string name) {
    if (!p) throw std::invalid_argument("Custom function: prox factory required");
    return FunctionDescriptor(CustomFn{std::move(p), std::move(v), std::move(name)});
}

std::string FunctionDescriptor::describe() const {
    return std::visit(
        [](const auto& f) -> std::string {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, L1Fn>) return "L1(" + fmt(f.weight) + ")";
            else if constexpr (std::is_same_v<T, SqNormHalfFn>) return "SqNormHalf";
            else if constexpr (std::is_same_v<T, QuadraticFitFn>) return "QuadraticFit";
            else if constexpr (std::is_same_v<T, NegLogDetFn>) return "NegLogDet";
            else if constexpr (std::is_same_v<T, NuclearFn>) return "Nuclear(" + fmt(f.weight) + ")";
            else if constexpr (std::is_same_v<T, IndicatorFn>) return "Indicator(" + f.set.describe() + ")";
            else return f.name;
        },
        v_);
}

bool FunctionDescriptor::is_smooth() const {
    return std::holds_alternative<SqNormHalfFn>(v_) || std::holds_alternative<QuadraticFitFn>(v_) ||
           (std::holds_alternative<L1Fn>(v_) && std::get<L1Fn>(v_).weight == 0.0);
}

double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

Vector soft_threshold(const Vector& x, double t) {
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) out(i) = soft_threshold(x(i), t);
    return out;
}

namespace {

Matrix symmetric_from_flat(const Vector& x, Index n, const char* what) {
    require_dim(x, n * n, what);
    Matrix X = unflatten_rowmajor(x, n, n);
    double scale = std::max(1.0, X.cwiseAbs().maxCoeff());
    if ((X - X.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::invalid_argument(std::string(what) + ": input not symmetric");
    return 0.5 * (X + X.transpose());
}

}  // namespace

Vector prox(const FunctionDescriptor& f, double gamma, const Vector& x) {
    if (!(gamma > 0) || !std::isfinite(gamma)) throw std::invalid_argument("prox: gamma must be positive");
    require_finite(x, "prox");
    return std::visit(
        [gamma, &x](const auto& g) -> Vector {
            using T = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<T, L1Fn>) {
                return soft_threshold(x, gamma * g.weight);
            } else if constexpr (std::is_same_v<T, SqNormHalfFn>) {
                return x / (1.0 + gamma);
            } else if constexpr (std::is_same_v<T, QuadraticFitFn>) {
                require_dim(x, g.H.cols(), "prox(QuadraticFit)");
                Matrix M = gamma * (g.H.transpose() * g.H);
                M.diagonal().array() += 1.0 + gamma * g.kappa;
                Vector rhs = x + gamma * (g.H.transpose() * g.y);
                return M.llt().solve(rhs);
            } else if constexpr (std::is_same_v<T, NegLogDetFn>) {
                Matrix X = symmetric_from_flat(x, g.n, "prox(NegLogDet)");
                SymEig e = sym_eig(X);
                Vector mu(e.values.size());
                for (Index i = 0; i < mu.size(); ++i) {
                    double m = e.values(i);
                    mu(i) = (m + std::sqrt(m * m + 4.0 * gamma)) / 2.0;
                }
                Matrix P = e.vectors * mu.asDiagonal() * e.vectors.transpose();
                P = 0.5 * (P + P.transpose());
                return flatten_rowmajor(P);
            } else if constexpr (std::is_same_v<T, NuclearFn>) {
                require_dim(x, g.rows * g.cols, "prox(Nuclear)");
                Matrix X = unflatten_rowmajor(x, g.rows, g.cols);
                Svd s = svd(X);
                Vector sig = s.singular_values;
                for (Index i = 0; i < sig.size(); ++i) sig(i) = std::max(0.0, sig(i) - gamma * g.weight);
                return flatten_rowmajor(s.U * sig.asDiagonal() * s.V.transpose());
            } else if constexpr (std::is_same_v<T, IndicatorFn>) {
                return project(g.set, x);
            } else if constexpr (std::is_same_v<T, SeparableScalarFn>) {
                Vector out(x.size());
                for (Index i = 0; i < x.size(); ++i) out(i) = g.prox(gamma, x(i));
                return out;
            } else {
                Vector p = g.prox(gamma, x);
                require_dim(p, x.size(), "custom prox result");
                return p;
            }
        },
        f.variant());
}

Vector prox_conjugate(const FunctionDescriptor& f, double gamma, const Vector& x) {
    if (!(gamma > 0) || !std::isfinite(gamma)) throw std::invalid_argument("prox_conjugate: gamma must be positive");
    return x - gamma * prox(f, 1.0 / gamma, x / gamma);
}

double value(const FunctionDescriptor& f, const Vector& x) {
    return std::visit(
        [&x](const auto& g) -> double {
            using T = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<T, L1Fn>) {
                return g.weight * x.lpNorm<1>();
            } else if constexpr (std::is_same_v<T, SqNormHalfFn>) {
                return 0.5 * x.squaredNorm();
            } else if constexpr (std::is_same_v<T, QuadraticFitFn>) {
                require_dim(x, g.H.cols(), "value(QuadraticFit)");
                return 0.5 * (g.H * x - g.y).squaredNorm() + 0.5 * g.kappa * x.squaredNorm();
            } else if constexpr (std::is_same_v<T, NegLogDetFn>) {
                Matrix X = symmetric_from_flat(x, g.n, "value(NegLogDet)");
                SymEig e = sym_eig(X);
                if (e.values.minCoeff() <= 0) return kInf;
                return -e.values.array().log().sum();
            } else if constexpr (std::is_same_v<T, NuclearFn>) {
                require_dim(x, g.rows * g.cols, "value(Nuclear)");
                return g.weight * svd(unflatten_rowmajor(x, g.rows, g.cols)).singular_values.sum();
            } else if constexpr (std::is_same_v<T, IndicatorFn>) {
                return distance(g.set, x) <= 1e-9 * (1.0 + x.norm()) ? 0.0 : kInf;
            } else if constexpr (std::is_same_v<T, SeparableScalarFn>) {
                if (!g.value) throw std::invalid_argument("value: separable function has no value callable");
                double s = 0.0;
                for (Index i = 0; i < x.size(); ++i) s += g.value(x(i));
                return s;
            } else {
                if (!g.value) throw std::invalid_argument("value: custom function has no value callable");
                return g.value(x);
            }
        },
        f.variant());
}

Vector gradient(const FunctionDescriptor& f, const Vector& x) {
    if (const auto* q = std::get_if<QuadraticFitFn>(&f.variant())) {
        require_dim(x, q->H.cols(), "gradient(QuadraticFit)");
        return q->H.transpose() * (q->H * x - q->y) + q->kappa * x;
    }
    if (std::holds_alternative<SqNormHalfFn>(f.variant())) return x;
    if (const auto* l = std::get_if<L1Fn>(&f.variant()); l && l->weight == 0.0) return Vector::Zero(x.size());
    throw std::invalid_argument("gradient: " + f.describe() + " is not smooth");
}

double gradient_lipschitz(const FunctionDescriptor& f) {
    if (const auto* q = std::get_if<QuadraticFitFn>(&f.variant())) {
        double h = spectral_norm(q->H);
        return h * h + q->kappa;
    }
    if (std::holds_alternative<SqNormHalfFn>(f.variant())) return 1.0;
    if (const auto* l = std::get_if<L1Fn>(&f.variant()); l && l->weight == 0.0) return 0.0;
    throw std::invalid_argument("gradient_lipschitz: " + f.describe() + " is not smooth");
}

OperatorRef prox_op(const FunctionDescriptor& f, double gamma, Index dim) {
    if (!(gamma > 0)) throw std::invalid_argument("prox_op: gamma must be positive");
    return OperatorRef(dim, [f, gamma](const Vector& x) { return prox(f, gamma, x); },
                       RegularityTag::firmly_nonexpansive(), "prox " + f.describe());
}

OperatorRef projection_op(const SetDescriptor& set) {
    return OperatorRef(set.dim(), [set](const Vector& x) { return project(set, x); },
                       RegularityTag::firmly_nonexpansive(), "proj " + set.describe());
}

// ---- monotone operators --------------------------------------------------

MonotoneOp::MonotoneOp(Index dim, Resolvent resolvent, Eval eval, std::optional<double> beta,
                       std::optional<double> delta, std::string name)
    : dim_(dim), res_(std::move(resolvent)), eval_(std::move(eval)), beta_(beta), delta_(delta), name_(std::move(name)) {
    if (dim < 1) throw DimensionError("MonotoneOp: dimension must be positive");
    if (beta_ && !(*beta_ > 0)) throw std::invalid_argument("MonotoneOp: cocoercivity must be positive");
    if (delta_ && !(*delta_ >= 0)) throw std::invalid_argument("MonotoneOp: Lipschitz constant must be >= 0");
}

MonotoneOp MonotoneOp::subdifferential(const FunctionDescriptor& f, Index dim) {
    Eval ev;
    std::optional<double> beta, delta;
    if (f.is_smooth()) {
        ev = [f](const Vector& x) { return gradient(f, x); };
        double lip = gradient_lipschitz(f);
        delta = lip;
        beta = lip > 0 ? 1.0 / lip : kInf;
    }
    return MonotoneOp(dim, [f](double g, const Vector& x) { return prox(f, g, x); }, ev, beta, delta,
                      "subdiff " + f.describe());
}

MonotoneOp MonotoneOp::normal_cone(const SetDescriptor& set) {
    return MonotoneOp(set.dim(), [set](double, const Vector& x) { return project(set, x); }, {}, std::nullopt,
                      std::nullopt, "normal cone " + set.describe());
}

MonotoneOp MonotoneOp::zero(Index dim) {
    return MonotoneOp(dim, [](double, const Vector& x) { return x; },
                      [dim](const Vector&) -> Vector { return Vector::Zero(dim); }, kInf, 0.0, "0");
}

MonotoneOp MonotoneOp::affine(const Matrix& M, const Vector& c) {
    if (M.rows() != M.cols() || M.rows() != c.size()) throw DimensionError("MonotoneOp::affine: shape mismatch");
    require_finite(M, "MonotoneOp::affine");
    Matrix S = 0.5 * (M + M.transpose());
    double mu = sym_eig(S).values.minCoeff();
    double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if (mu < -1e-12 * scale) throw std::invalid_argument("MonotoneOp::affine: M + M^T is not positive semidefinite");
    double nm = spectral_norm(M);
    std::optional<double> beta;
    if (nm == 0.0) {
        beta = kInf;
    } else if ((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * scale) {
        beta = 1.0 / sym_eig(S).values.maxCoeff();
    } else if (mu > 0) {
        beta = mu / (nm * nm);
    }
    return MonotoneOp(
        M.rows(),
        [M, c](double g, const Vector& x) -> Vector {
            Matrix A = g * M;
            A.diagonal().array() += 1.0;
            return A.partialPivLu().solve(x - g * c);
        },
        [M, c](const Vector& x) -> Vector { return M * x + c; }, beta, nm, "affine");
}

MonotoneOp MonotoneOp::gradient_of(const FunctionDescriptor& f, Index dim) {
    if (!f.is_smooth()) throw std::invalid_argument("gradient_of: " + f.describe() + " is not smooth");
    return subdifferential(f, dim);
}

MonotoneOp MonotoneOp::single_valued(Index dim, Eval eval, std::optional<double> beta, std::optional<double> delta,
                                     std::string name) {
    if (!eval) throw std::invalid_argument("single_valued: eval required");
    return MonotoneOp(dim, {}, std::move(eval), beta, delta, std::move(name));
}

std::optional<double> MonotoneOp::lipschitz() const {
    if (delta_) return delta_;
    if (beta_) return 1.0 / *beta_;
    return std::nullopt;
}

Vector MonotoneOp::resolvent(double gamma, const Vector& x) const {
    if (!res_) throw std::invalid_argument("MonotoneOp '" + name_ + "': resolvent unavailable");
    if (!(gamma > 0)) throw std::invalid_argument("resolvent: gamma must be positive");
    require_dim(x, dim_, "resolvent");
    return res_(gamma, x);
}

Vector MonotoneOp::operator()(const Vector& x) const {
    if (!eval_) throw std::invalid_argument("MonotoneOp '" + name_ + "': not single-valued");
    require_dim(x, dim_, "MonotoneOp eval");
    return eval_(x);
}

MonotoneOp MonotoneOp::inverse() const {
    if (!res_) throw std::invalid_argument("MonotoneOp::inverse: resolvent unavailable");
    auto r = res_;
    return MonotoneOp(dim_, [r](double g, const Vector& x) -> Vector { return x - g * r(1.0 / g, x / g); }, {},
                      std::nullopt, std::nullopt, "inverse " + name_);
}

OperatorRef MonotoneOp::resolvent_op(double gamma) const {
    MonotoneOp self = *this;
    if (!res_) throw std::invalid_argument("MonotoneOp '" + name_ + "': resolvent unavailable");
    return OperatorRef(dim_, [self, gamma](const Vector& x) { return self.resolvent(gamma, x); },
                       RegularityTag::firmly_nonexpansive(), "J " + name_);
}

// ---- calculus -----------------------------------------------------------

namespace {

double require_alpha(const OperatorRef& T, const char* where) {
    auto a = T.tag().averaged_constant();
    if (!a)
        throw PreconditionError(where, "operand '" + T.name() + "' tagged " + T.tag().describe() +
                                           " is not nonexpansive");
    return *a;
}

}  // namespace

OperatorRef relax(const OperatorRef& T, double lambda) {
    double alpha = require_alpha(T, "relaxation");
    if (!(lambda > 0)) throw PreconditionError("relaxation", "lambda must be positive");
    double la = lambda * alpha;
    if (la > 1.0 + 1e-12)
        throw PreconditionError("relaxation", "lambda = " + fmt(lambda) + " exceeds 1/alpha = " + fmt(1.0 / alpha));
    RegularityTag tag = la >= 1.0 - 1e-12 ? RegularityTag::nonexpansive() : tag_from_alpha(la);
    OperatorRef out(
        T.dim(), [T, lambda](const Vector& x) -> Vector { return x + lambda * (T(x) - x); }, tag,
        "relax(" + T.name() + ")");
    for (const auto& w : T.warnings()) out.add_warning(w);
    return out;
}

double composed_alpha(const std::vector<double>& alphas) {
    double s = 0.0;
    for (double a : alphas) {
        if (!(a > 0 && a < 1)) throw std::invalid_argument("composed_alpha: constants must lie in (0,1)");
        s += a / (1.0 - a);
    }
    return 1.0 / (1.0 + 1.0 / s);
}

OperatorRef compose(const std::vector<OperatorRef>& ops) {
    if (ops.empty()) throw std::invalid_argument("compose: empty operator list");
    if (ops.size() == 1) return ops.front();
    std::vector<double> alphas;
    bool plain = false;
    const Index n = ops.front().dim();
    std::string name;
    for (const auto& T : ops) {
        if (T.dim() != n) throw DimensionError("compose: dimension mismatch");
        double a = require_alpha(T, "composition");
        if (a >= 1.0) plain = true;
        alphas.push_back(a);
        name += (name.empty() ? "" : " o ") + T.name();
    }
    RegularityTag tag = plain ? RegularityTag::nonexpansive() : tag_from_alpha(composed_alpha(alphas));
    OperatorRef out(
        n,
        [ops](const Vector& x) -> Vector {
            Vector y = x;
            for (auto it = ops.rbegin(); it != ops.rend(); ++it) y = (*it)(y);
            return y;
        },
        tag, name);
    for (const auto& T : ops)
        for (const auto& w : T.warnings()) out.add_warning(w);
    if (plain)
        out.add_warning({"compose-nonexpansive",
                         "an operand is only nonexpansive; the composition carries no averagedness constant"});
    return out;
}

OperatorRef combine(const std::vector<double>& weights, const std::vector<OperatorRef>& ops) {
    if (weights.size() != ops.size() || ops.empty())
        throw std::invalid_argument("combine: weights and operators must have equal nonzero length");
    double wsum = 0.0, alpha = 0.0;
    const Index n = ops.front().dim();
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (!(weights[i] > 0)) throw std::invalid_argument("combine: weights must be positive");
        if (ops[i].dim() != n) throw DimensionError("combine: dimension mismatch");
        wsum += weights[i];
        alpha += weights[i] * require_alpha(ops[i], "convex combination");
    }
    if (std::abs(wsum - 1.0) > 1e-12) throw std::invalid_argument("combine: weights must sum to 1");
    if (ops.size() == 1) return ops.front();
    OperatorRef out(
        n,
        [weights, ops](const Vector& x) -> Vector {
            Vector s = Vector::Zero(x.size());
            for (std::size_t i = 0; i < ops.size(); ++i) s += weights[i] * ops[i](x);
            return s;
        },
        tag_from_alpha(alpha), "combination");
    for (const auto& T : ops)
        for (const auto& w : T.warnings()) out.add_warning(w);
    return out;
}

OperatorRef forward_step(const MonotoneOp& B, double gamma) {
    if (!B.is_single_valued()) throw PreconditionError("forward step", "operator is not single-valued");
    auto beta = B.cocoercivity();
    if (!beta) throw PreconditionError("forward step", "operator has no declared cocoercivity constant");
    if (!(gamma > 0 && gamma < 2.0 * *beta))
        throw PreconditionError("forward step", "gamma = " + fmt(gamma) + " must lie in (0, 2 beta) = (0, " +
                                                    fmt(2.0 * *beta) + ")");
    double alpha = std::isinf(*beta) ? 0.0 : gamma / (2.0 * *beta);
    RegularityTag tag = alpha == 0.0 ? RegularityTag::firmly_nonexpansive() : tag_from_alpha(alpha);
    return OperatorRef(B.dim(), [B, gamma](const Vector& x) -> Vector { return x - gamma * B(x); }, tag,
                       "Id - g " + B.name());
}

OperatorRef lipschitz_to_averaged(const OperatorRef& T) {
    auto d = T.tag().lipschitz_constant();
    if (!d || *d >= 1.0)
        throw PreconditionError("Lipschitz to averaged", "requires Lipschitz constant < 1, got " + T.tag().describe());
    return T.with_tag(tag_from_alpha((*d + 1.0) / 2.0));
}

CocoerciveSum cocoercive_sum(const std::vector<LinMap>& Ls, const std::vector<std::pair<OperatorRef, double>>& Ts) {
    if (Ls.size() != Ts.size() || Ls.empty()) throw std::invalid_argument("cocoercive_sum: size mismatch");
    const Index n = Ls.front().in_dim();
    double denom = 0.0;
    for (std::size_t k = 0; k < Ls.size(); ++k) {
        if (Ls[k].in_dim() != n || Ls[k].out_dim() != Ts[k].first.dim())
            throw DimensionError("cocoercive_sum: dimension mismatch");
        if (!(Ts[k].second > 0)) throw std::invalid_argument("cocoercive_sum: beta_k must be positive");
        double nl = operator_norm(Ls[k]);
        if (nl == 0.0) throw std::invalid_argument("cocoercive_sum: L_" + std::to_string(k) + " is zero");
        denom += nl * nl / Ts[k].second;
    }
    double beta = 1.0 / denom;
    RegularityTag tag = beta >= 1.0 - 1e-9 ? RegularityTag::firmly_nonexpansive() : RegularityTag::cocoercive(beta);
    OperatorRef op(
        n,
        [Ls, Ts](const Vector& x) -> Vector {
            Vector s = Vector::Zero(x.size());
            for (std::size_t k = 0; k < Ls.size(); ++k) s += Ls[k].apply_adjoint(Ts[k].first(Ls[k].apply(x)));
            return s;
        },
        tag, "cocoercive sum");
    return {op, beta};
}

OperatorRef three_composite(const OperatorRef& T1, const OperatorRef& T2, const OperatorRef& T3) {
    if (T1.dim() != T2.dim() || T2.dim() != T3.dim()) throw DimensionError("three_composite: dimension mismatch");
    for (const OperatorRef* T : {&T1, &T2}) {
        auto a = T->tag().averaged_constant();
        if (!a || *a > 0.5)
            throw PreconditionError("three-operator composite",
                                    "operand '" + T->name() + "' must be firmly nonexpansive, is " + T->tag().describe());
    }
    double a3 = require_alpha(T3, "three-operator composite");
    RegularityTag tag = a3 >= 1.0 ? RegularityTag::nonexpansive() : tag_from_alpha(1.0 / (2.0 - a3));
    OperatorRef out(
        T1.dim(),
        [T1, T2, T3](const Vector& x) -> Vector {
            Vector t2 = T2(x);
            return T1(t2 - x + T3(t2)) + x - t2;
        },
        tag, "three-operator composite");
    if (a3 >= 1.0) out.add_warning({"three-composite-nonexpansive", "third operand is only nonexpansive"});
    return out;
}

OperatorRef reflect(const OperatorRef& T) {
    auto a = T.tag().averaged_constant();
    if (!a || *a > 0.5)
        throw PreconditionError("reflection", "operand must be firmly nonexpansive, is " + T.tag().describe());
    return OperatorRef(T.dim(), [T](const Vector& x) -> Vector { return 2.0 * T(x) - x; },
                       RegularityTag::nonexpansive(), "reflect(" + T.name() + ")");
}

double residual(const OperatorRef& T, const Vector& x) { return (T(x) - x).norm(); }

}  // namespace splitfix
