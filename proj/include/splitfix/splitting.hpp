#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "splitfix/drivers.hpp"
#include "splitfix/operators.hpp"

namespace splitfix {

// 0 in A x + B x (+ C x). Which of B and C must be single-valued depends on the method.
struct InclusionProblem {
    MonotoneOp A;
    MonotoneOp B;
    std::optional<MonotoneOp> C;
};

// One term L_k^* (B_k + C_k)(L_k x) of a composite inclusion.
struct CompositeTerm {
    MonotoneOp B;
    LinMap L;
    std::optional<MonotoneOp> C;  // single-valued; absent means 0
};

// 0 in A x + sum_k L_k^* (B_k + C_k)(L_k x). Absent A means A = 0.
struct CompositeProblem {
    std::optional<MonotoneOp> A;
    std::vector<CompositeTerm> terms;

    Index dim() const;
    std::vector<Index> dual_dims() const;
};

// Coupled system over x = (x_1..x_m):  0 in A_i x_i + sum_k L_ki^* B_k(sum_j L_kj x_j).
// L[k][i] absent means the zero map.
struct SystemProblem {
    std::vector<MonotoneOp> A;
    std::vector<MonotoneOp> B;
    std::vector<std::vector<std::optional<LinMap>>> L;

    std::vector<Index> primal_dims() const;
    std::vector<Index> dual_dims() const;
    void validate() const;
    // sum_i L_ki x_i for every k, and sum_k L_ki^* v_k for every i (flattened blocks).
    Vector forward(const Vector& x) const;
    Vector adjoint(const Vector& v) const;
};

struct PrimalDualTrace {
    IterTrace primal;
    Vector v;                          // terminal dual iterate, blocks concatenated
    std::vector<Vector> dual_snapshots;  // aligned with primal.snapshot_iters
    double kkt_primal = 0.0, kkt_dual = 0.0;
};

// Step parameter: automatic (midpoint of the method's band), constant, or a sequence.
class StepSize {
public:
    StepSize() = default;
    StepSize(double g) : kind_(Kind::Constant), value_(g) {}  // NOLINT: implicit by design
    static StepSize sequence(std::function<double(std::size_t)> fn);

    bool automatic() const { return kind_ == Kind::Auto; }
    bool constant() const { return kind_ != Kind::Sequence; }
    double at(std::size_t n, double lo, double hi) const;

private:
    enum class Kind { Auto, Constant, Sequence } kind_ = Kind::Auto;
    double value_ = 0.0;
    std::function<double(std::size_t)> fn_;
};

struct SplitOptions {
    StepSize gamma;
    std::optional<RelaxationSchedule> lambda;  // default: constant 1
    double eps = 1e-3;
    std::function<double(const Vector&)> objective;  // recorded along the primal sequence
};

// ---- two and three operators ---------------------------------------------

// Solution sequence x_n = J_{gB} y_n; trace.x is the last x_n.
IterTrace douglas_rachford(const InclusionProblem& p, const Vector& y0, const SplitOptions& opt = {},
                           const StopRule& stop = {});
// B single-valued and Lipschitz.
IterTrace tseng_fbf(const InclusionProblem& p, const Vector& x0, const SplitOptions& opt = {},
                    const StopRule& stop = {});
// B single-valued and cocoercive.
IterTrace forward_backward(const InclusionProblem& p, const Vector& x0, const SplitOptions& opt = {},
                           const StopRule& stop = {});
// C single-valued and cocoercive (absent C is 0). Solution sequence x_n = J_{gB} y_n.
IterTrace davis_yin(const InclusionProblem& p, const Vector& y0, const SplitOptions& opt = {},
                    const StopRule& stop = {});
// C single-valued and Lipschitz (absent C is 0). Dual sequence u_n for 0 in -(A+C)^{-1}(-u) + B^{-1} u.
PrimalDualTrace three_op_primal_dual(const InclusionProblem& p, const Vector& x0, const Vector& u0,
                                     const SplitOptions& opt = {}, const StopRule& stop = {});

// ---- composite problems --------------------------------------------------

struct ProductSpace {
    std::vector<Index> dims;
    MonotoneOp B;                  // blockwise resolvent
    std::optional<MonotoneOp> C;   // blockwise map, absent when every C_k is absent
    LinMap L;                      // x -> (L_1 x, ..., L_q x)
    SetDescriptor V;               // range of L
    Matrix Q;                      // sum_k L_k^* L_k
};
ProductSpace product_space_lift(const std::vector<CompositeTerm>& terms);

// A = 0, cocoercive C_k, Q = sum L_k^* L_k invertible.
IterTrace composite_dy(const CompositeProblem& p, const Vector& y0, const SplitOptions& opt = {},
                       const StopRule& stop = {});
// chi = sqrt(sum ||L_k||^2) (1 + delta sqrt(sum ||L_k||^2)) with delta the largest Lipschitz constant of the C_k.
double mlfb_chi(const CompositeProblem& p);
PrimalDualTrace mlfb_primal_dual(const CompositeProblem& p, const Vector& x0, const Vector& v0,
                                 const SplitOptions& opt = {}, const StopRule& stop = {});
// kappa = ||L W L^*||.
double preconditioned_kappa(const CompositeProblem& p, const Matrix& W);
PrimalDualTrace preconditioned_fb_pd(const CompositeProblem& p, const Matrix& W, double sigma, const Vector& x0,
                                     const Vector& v0, const SplitOptions& opt = {}, const StopRule& stop = {});

// Resolvent residuals ||J_{gA}(x - g L^*(v + C L x)) - x|| and ||J_{g B^{-1}}(v + g L x) - v||.
std::pair<double, double> kkt_residuals(const CompositeProblem& p, const Vector& x, const Vector& v, double gamma = 1.0);
std::pair<double, double> kkt_residuals(const SystemProblem& p, const Vector& x, const Vector& v, double gamma = 1.0);

// ---- block-iterative projective splitting ----------------------------------

struct ProjectiveStep {
    std::size_t n;
    Vector x, v;              // current pair
    Vector t_star, t;         // normal of the separating half-space
    double offset;            // H_n = {(x,v) : <x, t*> + <t, v> <= offset}
    double theta;
};

struct ProjectiveOptions {
    std::optional<BlockSchedule> primal_blocks;  // default: all indices each iteration
    std::optional<BlockSchedule> dual_blocks;
    std::vector<double> gamma;  // per primal index, default 1
    std::vector<double> mu;     // per dual index, default 1
    double eps = 1e-3;
    std::function<double(const Vector&)> objective;
    std::function<void(const ProjectiveStep&)> observer;
};
PrimalDualTrace projective_split(const SystemProblem& p, const Vector& x0, const Vector& v0,
                                 const ProjectiveOptions& opt = {}, const StopRule& stop = {});

// ---- ADMM -----------------------------------------------------------------

// argmin_x g f(x) + ||L x - y||^2 / 2.
using AugmentedProx = std::function<Vector(double gamma, const Vector& y)>;
// Closed form for quadratic members of the catalog (zero, SqNormHalf, QuadraticFit).
AugmentedProx quadratic_augmented_prox(const FunctionDescriptor& f, const LinMap& L, double gamma);

// Solution sequence x_n. A missing oracle is built by quadratic_augmented_prox.
IterTrace admm(const FunctionDescriptor& f, const FunctionDescriptor& g, const LinMap& L, const Vector& y0,
               const Vector& z0, const SplitOptions& opt = {}, const StopRule& stop = {},
               AugmentedProx oracle = {});

// ---- stochastic and block-coordinate methods ----------------------------------

using GradientEstimator = std::function<Vector(const Vector& x, std::size_t n, Rng& rng)>;
// delta: Lipschitz constant of the full gradient. variance_declared records the caller's
// statement that the variance conditions hold.
IterTrace stochastic_fb(const FunctionDescriptor& f, const GradientEstimator& u, double delta, const Vector& x0,
                        Rng& rng, const SplitOptions& opt = {}, const StopRule& stop = {},
                        bool variance_declared = false);

struct SmoothTerm {
    std::function<Vector(const Vector&)> grad;
    double lipschitz;
    std::function<double(const Vector&)> value;  // optional
};

// min sum_i f_i(x_i) + sum_k g_k(sum_i L_ki x_i).
struct BlockProblem {
    std::vector<FunctionDescriptor> f;
    std::vector<Index> primal_dims;
    std::vector<FunctionDescriptor> g;  // prox form, used by block_coordinate_dr
    std::vector<SmoothTerm> g_smooth;   // gradient form, used by block_coordinate_fb
    std::vector<Index> dual_dims;
    std::vector<std::vector<std::optional<LinMap>>> L;  // L[k][i]

    std::size_t m() const { return primal_dims.size(); }
    std::size_t q() const { return dual_dims.size(); }
    void validate(bool smooth) const;
    Vector forward(const Vector& x) const;
    Vector adjoint(const Vector& y) const;
    double objective(const Vector& x) const;
};

struct BlockDrState {
    Vector x, z;  // primal blocks
    Vector y, w;  // dual-space blocks
};
// Solution sequence z_n. probs has m + q entries.
IterTrace block_coordinate_dr(const BlockProblem& p, const BlockDrState& init, const std::vector<double>& probs,
                              Rng& rng, const SplitOptions& opt = {}, const StopRule& stop = {});

// gamma has one entry per primal block (constant in n); empty means 1/delta for every block,
// with delta the Lipschitz bound of the full gradient.
IterTrace block_coordinate_fb(const BlockProblem& p, const Vector& x0, const std::vector<double>& gamma,
                              const std::vector<double>& probs, Rng& rng, const SplitOptions& opt = {},
                              const StopRule& stop = {});
double block_gradient_lipschitz(const BlockProblem& p);

// min f0(x) + sum_i w_i f_i(x) with block updates of the gradient steps.
IterTrace block_update_fb(const FunctionDescriptor& f0, const std::vector<SmoothTerm>& fs,
                          const std::vector<double>& weights, BlockSchedule schedule, double gamma, const Vector& x0,
                          const std::vector<Vector>& t_init, const StopRule& stop = {});

void write_dual_csv(const PrimalDualTrace& t, std::ostream& os);

}  // namespace splitfix
