#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splitfix/drivers.hpp"
#include "splitfix/operators.hpp"

namespace splitfix {

struct Activation {
    enum class Kind { ReLU, Sigmoid, Softmax, Identity, CustomProx };

    Kind kind = Kind::Identity;
    std::optional<FunctionDescriptor> f;  // CustomProx only: the activation is prox_f

    static Activation relu() { return {Kind::ReLU, std::nullopt}; }
    static Activation sigmoid() { return {Kind::Sigmoid, std::nullopt}; }  // 1/(1+e^-t) - 1/2
    static Activation softmax() { return {Kind::Softmax, std::nullopt}; }
    static Activation identity() { return {Kind::Identity, std::nullopt}; }
    static Activation custom_prox(FunctionDescriptor fd) { return {Kind::CustomProx, std::move(fd)}; }
    static Activation parse(const std::string& name);

    Vector operator()(const Vector& x) const;
    bool separable() const { return kind != Kind::Softmax; }
    std::string name() const;
    OperatorRef as_operator(Index dim) const;  // tagged firmly nonexpansive
};

struct Layer {
    Matrix W;
    Vector b;
    Activation act;
};

struct FeedforwardNet {
    std::vector<Layer> layers;

    std::size_t depth() const { return layers.size(); }
    Index input_dim() const;
    Index output_dim() const;
    bool square() const { return !layers.empty() && input_dim() == output_dim(); }
    void validate() const;

    Vector layer(std::size_t i, const Vector& x) const;  // R_i(W_i x + b_i)
    Vector operator()(const Vector& x) const;
    Matrix end_to_end() const;                            // W_m ... W_1
    OperatorRef as_operator() const;                      // tagged Lipschitz(theta_m / 2^{m-1})
};

inline constexpr std::size_t kMaxThetaDepth = 12;

// ||W|| plus, for every nonempty set of cut positions in {1..m-1}, the product of the
// norms of the partial products between cuts.
double theta(const FeedforwardNet& net);

struct Certificate {
    double theta_m = 0.0;
    double lipschitz_bound = 0.0;  // theta_m / 2^{m-1}
    double lower_bound = 0.0;      // ||W_m ... W_1||
    double upper_bound = 0.0;      // ||W_1|| ... ||W_m||
    bool sandwich_holds = false;
    std::optional<double> nonnegative_bound;  // ||W|| when every weight is >= 0 and activations are separable
    std::optional<double> averaged_alpha;     // smallest alpha passing the averagedness test
};

Certificate lipschitz_certificate(const FeedforwardNet& net);

// ||W - 2^m (1-alpha) Id|| - ||W|| + 2 theta_m - 2^m alpha; the test passes when this is <= 0.
double averagedness_gap(const FeedforwardNet& net, double alpha);
bool averagedness_check(const FeedforwardNet& net, double alpha);
std::optional<double> smallest_alpha(const FeedforwardNet& net);

struct RecurrentResult {
    IterTrace trace;
    std::vector<Vector> states;           // x_1 .. x_m with x_0 = x_m, x_i = T_i x_{i-1}
    std::vector<double> layer_residuals;  // ||x_i - R_i(W_i x_{i-1} + b_i)||
    std::optional<double> alpha;
};

// x <- x + lambda_n (T x - x). The schedule is validated against the certified alpha when
// the averagedness test passes; otherwise the run carries a warning.
RecurrentResult recurrent_iterate(const FeedforwardNet& net, const RelaxationSchedule& lambda, const Vector& x0,
                                  const StopRule& stop = {});

}  // namespace splitfix
