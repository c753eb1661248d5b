#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "splitfix/linalg.hpp"

namespace splitfix {

enum class RegKind { Lipschitz, Nonexpansive, Averaged, FirmlyNonexpansive, Cocoercive, Contraction };

class RegularityTag {
public:
    static RegularityTag lipschitz(double delta);
    static RegularityTag nonexpansive();
    static RegularityTag averaged(double alpha);
    static RegularityTag firmly_nonexpansive();
    static RegularityTag cocoercive(double beta);
    static RegularityTag contraction(double delta);

    RegKind kind() const { return kind_; }
    double constant() const { return constant_; }

    // Averagedness constant implied by the tag (1 means nonexpansive only), absent when the
    // tag does not imply nonexpansiveness.
    std::optional<double> averaged_constant() const;
    std::optional<double> lipschitz_constant() const;

    // One step down the implication chain:
    // FNE -> Averaged(1/2) -> Nonexpansive -> Lipschitz(1); Cocoercive(b) -> Lipschitz(1/b);
    // Contraction(d) -> Lipschitz(d). Lipschitz is the bottom.
    RegularityTag weaken() const;

    std::string describe() const;
    bool operator==(const RegularityTag&) const = default;

private:
    RegularityTag(RegKind k, double c) : kind_(k), constant_(c) {}
    RegKind kind_ = RegKind::Nonexpansive;
    double constant_ = 1.0;
};

struct Warning {
    std::string code;
    std::string message;
};

class OperatorRef {
public:
    using Fn = std::function<Vector(const Vector&)>;

    OperatorRef(Index dim, Fn eval, RegularityTag tag, std::string name = {});

    Vector operator()(const Vector& x) const;
    Index dim() const { return dim_; }
    const RegularityTag& tag() const { return tag_; }
    const std::string& name() const { return name_; }
    const std::vector<Warning>& warnings() const { return warnings_; }

    OperatorRef with_tag(RegularityTag tag) const;
    OperatorRef& add_warning(Warning w);

private:
    Index dim_;
    Fn eval_;
    RegularityTag tag_;
    std::string name_;
    std::vector<Warning> warnings_;
};

OperatorRef identity_op(Index n);

// ---- sets ---------------------------------------------------------------

struct BoxSet {
    Vector lo, hi;
};
struct HalfspaceSet {  // {x : <a,x> <= b}
    Vector a;
    double b;
};
struct HyperplaneSet {  // {x : <a,x> = b}
    Vector a;
    double b;
};
struct L2BallSet {
    Vector center;
    double radius;
};
struct AffineSet {  // {x : A x = c}
    Matrix A;
    Vector c;
    std::shared_ptr<const Matrix> pinv;
};
struct CustomSet {
    Index dim;
    std::function<Vector(const Vector&)> projector;
    std::string name;
};

class SetDescriptor {
public:
    using Variant = std::variant<BoxSet, HalfspaceSet, HyperplaneSet, L2BallSet, AffineSet, CustomSet>;

    static SetDescriptor box(Vector lo, Vector hi);
    static SetDescriptor interval(double lo, double hi);  // 1-D box
    static SetDescriptor whole_space(Index n);
    static SetDescriptor halfspace(Vector a, double b);
    static SetDescriptor hyperplane(Vector a, double b);
    static SetDescriptor ball(Vector center, double radius);
    static SetDescriptor point(Vector c);
    static SetDescriptor affine(Matrix A, Vector c);
    static SetDescriptor custom(Index dim, std::function<Vector(const Vector&)> projector, std::string name = "custom");

    Index dim() const;
    const Variant& variant() const { return v_; }
    bool is_custom() const { return std::holds_alternative<CustomSet>(v_); }
    std::string describe() const;

private:
    explicit SetDescriptor(Variant v) : v_(std::move(v)) {}
    Variant v_;
};

Vector project(const SetDescriptor& set, const Vector& x);
double distance(const SetDescriptor& set, const Vector& x);

// ---- functions ----------------------------------------------------------

struct L1Fn {
    double weight;
};
struct SqNormHalfFn {};
struct QuadraticFitFn {  // 1/2 ||H x - y||^2 + kappa/2 ||x||^2
    Matrix H;
    Vector y;
    double kappa;
};
struct NegLogDetFn {  // -ln det X on n x n symmetric matrices (row-major flattened)
    Index n;
};
struct NuclearFn {  // weight * sum of singular values, rows x cols row-major
    double weight;
    Index rows, cols;
};
struct IndicatorFn {
    SetDescriptor set;
};
struct SeparableScalarFn {
    std::function<double(double gamma, double xi)> prox;
    std::function<double(double xi)> value;  // optional
    std::string name;
};
struct CustomFn {
    std::function<Vector(double gamma, const Vector& x)> prox;
    std::function<double(const Vector& x)> value;  // optional
    std::string name;
};

class FunctionDescriptor {
public:
    using Variant = std::variant<L1Fn, SqNormHalfFn, QuadraticFitFn, NegLogDetFn, NuclearFn, IndicatorFn,
                                 SeparableScalarFn, CustomFn>;

    static FunctionDescriptor l1(double weight = 1.0);
    static FunctionDescriptor zero();  // l1 with weight 0
    static FunctionDescriptor sq_norm_half();
    static FunctionDescriptor quadratic_fit(Matrix H, Vector y, double kappa = 0.0);
    // 1/2 ||x - o||^2
    static FunctionDescriptor sq_distance_half(const Vector& o);
    static FunctionDescriptor neg_log_det(Index n);
    static FunctionDescriptor nuclear(double weight, Index rows, Index cols);
    static FunctionDescriptor indicator(SetDescriptor set);
    static FunctionDescriptor separable(std::function<double(double, double)> prox,
                                        std::function<double(double)> value = {}, std::string name = "separable");
    static FunctionDescriptor custom(std::function<Vector(double, const Vector&)> prox,
                                     std::function<double(const Vector&)> value = {}, std::string name = "custom");

    const Variant& variant() const { return v_; }
    bool is_custom() const {
        return std::holds_alternative<CustomFn>(v_) || std::holds_alternative<SeparableScalarFn>(v_) ||
               (std::holds_alternative<IndicatorFn>(v_) && std::get<IndicatorFn>(v_).set.is_custom());
    }
    std::string describe() const;

    // Smooth members (SqNormHalf, QuadraticFit) expose a gradient and its Lipschitz constant.
    bool is_smooth() const;

private:
    explicit FunctionDescriptor(Variant v) : v_(std::move(v)) {}
    Variant v_;
};

Vector prox(const FunctionDescriptor& f, double gamma, const Vector& x);
// prox of gamma f* via x - gamma prox_{f/gamma}(x/gamma).
Vector prox_conjugate(const FunctionDescriptor& f, double gamma, const Vector& x);
// +inf outside the domain. Indicators accept points within 1e-9 (1+||x||) of the set.
double value(const FunctionDescriptor& f, const Vector& x);
Vector gradient(const FunctionDescriptor& f, const Vector& x);
double gradient_lipschitz(const FunctionDescriptor& f);

double soft_threshold(double x, double t);
Vector soft_threshold(const Vector& x, double t);

OperatorRef prox_op(const FunctionDescriptor& f, double gamma, Index dim);
OperatorRef projection_op(const SetDescriptor& set);

// ---- monotone operators --------------------------------------------------

class MonotoneOp {
public:
    using Resolvent = std::function<Vector(double gamma, const Vector& x)>;
    using Eval = std::function<Vector(const Vector& x)>;

    MonotoneOp(Index dim, Resolvent resolvent, Eval eval = {}, std::optional<double> beta = std::nullopt,
               std::optional<double> delta = std::nullopt, std::string name = {});

    static MonotoneOp subdifferential(const FunctionDescriptor& f, Index dim);
    static MonotoneOp normal_cone(const SetDescriptor& set);
    static MonotoneOp zero(Index dim);
    // x -> M x + c with M + M^T positive semidefinite.
    static MonotoneOp affine(const Matrix& M, const Vector& c);
    static MonotoneOp linear(const Matrix& M) { return affine(M, Vector::Zero(M.rows())); }
    // Gradient of a smooth catalog function; cocoercive with beta = 1/Lip.
    static MonotoneOp gradient_of(const FunctionDescriptor& f, Index dim);
    static MonotoneOp single_valued(Index dim, Eval eval, std::optional<double> beta, std::optional<double> delta,
                                    std::string name = "map");

    Index dim() const { return dim_; }
    bool has_resolvent() const { return static_cast<bool>(res_); }
    bool is_single_valued() const { return static_cast<bool>(eval_); }
    std::optional<double> cocoercivity() const { return beta_; }
    // Declared Lipschitz constant, or 1/beta when only cocoercivity is known.
    std::optional<double> lipschitz() const;
    const std::string& name() const { return name_; }

    Vector resolvent(double gamma, const Vector& x) const;
    Vector operator()(const Vector& x) const;

    // Inverse operator; resolvent through J_{g A^{-1}} x = x - g J_{A/g}(x/g).
    MonotoneOp inverse() const;
    OperatorRef resolvent_op(double gamma) const;

private:
    Index dim_;
    Resolvent res_;
    Eval eval_;
    std::optional<double> beta_, delta_;
    std::string name_;
};

// ---- averagedness calculus ----------------------------------------------

OperatorRef relax(const OperatorRef& T, double lambda);
// compose({T1,...,Tm}) = T1 o ... o Tm (Tm applied first).
OperatorRef compose(const std::vector<OperatorRef>& ops);
OperatorRef combine(const std::vector<double>& weights, const std::vector<OperatorRef>& ops);
OperatorRef forward_step(const MonotoneOp& B, double gamma);
OperatorRef lipschitz_to_averaged(const OperatorRef& T);

struct CocoerciveSum {
    OperatorRef op;
    double beta;
};
// sum_k L_k^* o T_k o L_k with beta = 1 / sum ||L_k||^2 / beta_k.
CocoerciveSum cocoercive_sum(const std::vector<LinMap>& Ls, const std::vector<std::pair<OperatorRef, double>>& Ts);

// T1 o (T2 - Id + T3 o T2) + Id - T2.
OperatorRef three_composite(const OperatorRef& T1, const OperatorRef& T2, const OperatorRef& T3);
OperatorRef reflect(const OperatorRef& T);

double residual(const OperatorRef& T, const Vector& x);

// Averaged constant of compose() for the given constants (all < 1).
double composed_alpha(const std::vector<double>& alphas);

}  // namespace splitfix
