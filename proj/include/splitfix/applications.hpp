#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "splitfix/drivers.hpp"
#include "splitfix/splitting.hpp"

namespace splitfix {

// ---- feasibility ------------------------------------------------------------

struct FeasibilitySpec {
    std::vector<SetDescriptor> sets;
    std::vector<std::optional<LinMap>> maps;  // empty, or one per set: L_i x must lie in sets[i]
    std::vector<double> weights;              // empty means uniform
    std::optional<SetDescriptor> hard;        // hard constraint of the least-squares relaxation

    void validate() const;
    std::vector<double> resolved_weights() const;
};

enum class PocsMode { Sequential, Barycentric };

struct PocsResult {
    IterTrace trace;
    double max_distance = 0.0;        // largest distance from the limit to a set
    std::optional<CycleResult> cycle;  // set when sequential sweeps settle away from the intersection
};
PocsResult pocs(const FeasibilitySpec& spec, const Vector& x0, PocsMode mode = PocsMode::Sequential,
                const StopRule& stop = {});

// x <- x + lambda_n (P_C(x - g L^*(L x - P_D L x)) - x), g in (0, 2/||L||^2).
IterTrace split_feasibility(const SetDescriptor& C, const SetDescriptor& D, const LinMap& L, double gamma,
                            const RelaxationSchedule& lambda, const Vector& x0, const StopRule& stop = {});

// min over spec.hard of 1/2 sum w_i d^2(L_i x, D_i) by block updates; g in (0, 2 / max ||L_i||^2).
IterTrace inconsistent_feasibility(const FeasibilitySpec& spec, double gamma, BlockSchedule schedule,
                                   const Vector& x0, const StopRule& stop = {});

// ---- estimation -------------------------------------------------------------

enum class Loss { Square, Logistic };
enum class Backend { BlockUpdate, ForwardBackward };

struct RegressionOptions {
    Loss loss = Loss::Square;
    Backend backend = Backend::BlockUpdate;
    std::optional<double> gamma;               // default: midpoint of the admissible band
    std::optional<BlockSchedule> schedule;     // block path only; default: all rows every iteration
    std::optional<RelaxationSchedule> lambda;  // forward-backward path only
};

// Square loss 1/2 (t - eta)^2, logistic loss ln(1 + e^t) - eta t.
double regression_loss(Loss loss, double t, double eta);
double regression_objective(const Matrix& A, const Vector& eta, double alpha, Loss loss, const Vector& x);
// min alpha ||x||_1 + sum_i loss(<a_i, x>, eta_i); rows of A are the a_i.
IterTrace lasso_logistic(const Matrix& A, const Vector& eta, double alpha, const Vector& x0,
                         const RegressionOptions& opt = {}, const StopRule& stop = {});
Loss parse_loss(const std::string& name);

// ---- matrix problems ----------------------------------------------------------

// prox of -g ln at xi.
double prox_neg_log(double gamma, double xi);
double glasso_objective(const Matrix& O, double chi, const Matrix& X);
// Matrices are row-major flattened in traces. Solution sequence X_n.
IterTrace graphical_lasso(const Matrix& O, double chi, double gamma, const RelaxationSchedule& lambda,
                          const Matrix& Y0, const StopRule& stop = {});

struct RpcaResult {
    Matrix X, Y;  // sparse and low-rank parts, X + Y = O
    IterTrace trace;
};
double rpca_objective(double chi, const Matrix& X, const Matrix& Y);
RpcaResult robust_pca(const Matrix& O, double chi, double gamma, const RelaxationSchedule& lambda,
                      const StopRule& stop = {});

// mask entries are 1 (observed) or 0. O is read through the mask.
double completion_objective(const Matrix& O, const Matrix& mask, double chi, const Matrix& X);
IterTrace matrix_completion(const Matrix& O, const Matrix& mask, double chi, const StepSize& gamma,
                            const std::optional<RelaxationSchedule>& lambda, const Matrix& X0,
                            const StopRule& stop = {});

// ---- cycles and games -----------------------------------------------------------

// limits[i] = P_i limits[i+1] (indices mod m).
CycleResult projection_cycles(const std::vector<SetDescriptor>& sets, const Vector& x0, const StopRule& stop = {});
CycleResult proximal_cycles(const std::vector<FunctionDescriptor>& phis, const Vector& x0, const StopRule& stop = {});

struct GameSpec {
    std::vector<Index> dims;
    std::vector<FunctionDescriptor> psi;  // per player
    FunctionDescriptor f = FunctionDescriptor::zero();  // joint, on the flattened profile
    // Partial gradient of player i's coupling term at the full profile; returns a dims[i] vector.
    std::vector<std::function<Vector(const Vector& profile)>> partial;
    std::optional<double> lipschitz;   // of the stacked partial gradients
    std::optional<double> cocoercive;  // of the stacked partial gradients
    // Player i's total loss at a profile; used by the best-response test.
    std::vector<std::function<double(const Vector& profile)>> loss;
    // Optional exact best response of player i to the rest of the profile.
    std::vector<std::function<Vector(const Vector& profile)>> best_response;

    std::size_t players() const { return dims.size(); }
    Index total_dim() const;
    void validate() const;
    Vector coupling(const Vector& profile) const;
};

PrimalDualTrace nash_fbf(const GameSpec& game, const StepSize& gamma, double eps, const Vector& x0, const Vector& v0,
                         const StopRule& stop = {});
IterTrace nash_dy(const GameSpec& game, double gamma, const RelaxationSchedule& lambda, const Vector& y0,
                  const StopRule& stop = {});

// Player i minimizes psi_i(x_i) + 1/2 ||L_i x_i + L_{i+1} x_{i+1} - o_i||^2 over C_i, indices mod m.
GameSpec chain_game(const std::vector<Matrix>& L, const std::vector<Vector>& o, const std::vector<FunctionDescriptor>& psi,
                    const std::vector<SetDescriptor>& C);
// Two players with losses phi_1(x_1) + <M x_1, x_2> and phi_2(x_2) - <M x_1, x_2>, phi_i = 1/2 c_i ||.||^2,
// actions restricted to C_1 and C_2.
GameSpec bilinear_game(double c1, double c2, const Matrix& M, const SetDescriptor& C1, const SetDescriptor& C2);

// Per player: loss at the profile minus the best achievable loss with the rest held fixed.
std::vector<double> best_response_residual(const GameSpec& game, const Vector& profile);
// Minimizer of a convex function on the line, by bracketing and golden section.
double golden_section_min(const std::function<double(double)>& h, double start);

// ---- plug-and-play ----------------------------------------------------------------

struct PnpModel {
    OperatorRef Q;  // denoiser with declared regularity
    FunctionDescriptor f;
};

// x <- x + lambda_n (Q(x - g grad f(x)) - x). Without an averaged tag the run proceeds with a warning.
IterTrace pnp_fb(const PnpModel& model, double gamma, const RelaxationSchedule& lambda, const Vector& x0,
                 const StopRule& stop = {});
// x_n = prox_{g f} y_n, y <- y + lambda_n (Q(2x - y) - x). Solution sequence x_n.
IterTrace pnp_dr(const PnpModel& model, double gamma, const RelaxationSchedule& lambda, const Vector& y0,
                 const StopRule& stop = {});

struct PnpAdmmResult {
    IterTrace trace;  // solution sequence x_n = Q(y_n - z_n)
    Vector y, z;
};
PnpAdmmResult pnp_admm(const PnpModel& model, double gamma, const Vector& y0, const Vector& z0,
                       const StopRule& stop = {});

// ---- adjoint mismatch ----------------------------------------------------------------

struct MismatchSpec {
    LinMap H;
    LinMap K;  // stands in for H^*
    double kappa = 0.0;
    Vector y;
    FunctionDescriptor f = FunctionDescriptor::zero();

    void validate() const;
    Matrix assembled() const;  // K H + kappa Id
};

struct BiasReport {
    Vector x_hat;               // solution with the exact adjoint
    double difference = 0.0;    // ||x_tilde - x_hat||
    double residual_term = 0.0;  // ||(H^* - K)(H x_hat - y)||
    // chi = 1/(nu + zeta): nu of g with zeta of L + L^*, and nu of f with zeta of (L + L^*)/2.
    double chi_full = 0.0, chi_half = 0.0;
    double bound_full = 0.0, bound_half = 0.0;
    // L^{-1} (H^* - K)(H x_hat - y), equal to x_tilde - x_hat when f = 0.
    Vector predicted_difference;
    bool exact_relation_applies = false;
};

struct MismatchResult {
    Vector x_tilde;
    IterTrace trace;
    BiasReport bias;
};
MismatchResult mismatched_fb(const MismatchSpec& spec, const StepSize& gamma,
                             const std::optional<RelaxationSchedule>& lambda, const Vector& x0,
                             const StopRule& stop = {});

// ---- nonlinear observations ---------------------------------------------------------

struct Observation {
    std::function<Vector(const Vector&)> R;  // H -> G_k
    std::function<Vector(const Vector&)> S;  // G_k -> H; absent means identity
    Vector r;
    std::string name;
};

struct ObservationSpec {
    Index dim = 0;
    std::vector<Observation> obs;
    std::size_t check_pairs = 200;
    std::uint64_t check_seed = 7;

    // Sampled firm nonexpansiveness of each S_k o R_k; throws PreconditionError on failure.
    void register_checks() const;
};

// Sweeps of T_1 o ... o T_q with T_k = S_k r_k + Id - S_k R_k. metadata["observation_residual"]
// holds max_k ||R_k x - r_k|| at the limit.
IterTrace nonlinear_observation_solve(const ObservationSpec& spec, const Vector& x0, const StopRule& stop = {});

}  // namespace splitfix
