#include "splitfix/netanalysis.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "splitfix/errors.hpp"
#include "splitfix/parallel.hpp"

namespace splitfix {

Activation Activation::parse(const std::string& name) {
    if (name == "relu" || name == "ReLU") return relu();
    if (name == "sigmoid") return sigmoid();
    if (name == "softmax") return softmax();
    if (name == "identity" || name == "linear") return identity();
    throw std::invalid_argument("unknown activation '" + name + "' (relu, sigmoid, softmax, identity)");
}

Vector Activation::operator()(const Vector& x) const {
    switch (kind) {
        case Kind::ReLU:
            return x.cwiseMax(0.0);
        case Kind::Sigmoid:
            return x.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)) - 0.5; });
        case Kind::Softmax: {
            if (x.size() == 0) return x;
            Vector e = (x.array() - x.maxCoeff()).exp().matrix();
            return e / e.sum();
        }
        case Kind::Identity:
            return x;
        case Kind::CustomProx:
            return prox(*f, 1.0, x);
    }
    return x;
}

std::string Activation::name() const {
    switch (kind) {
        case Kind::ReLU: return "relu";
        case Kind::Sigmoid: return "sigmoid";
        case Kind::Softmax: return "softmax";
        case Kind::Identity: return "identity";
        case Kind::CustomProx: return "prox";
    }
    return "?";
}

OperatorRef Activation::as_operator(Index dim) const {
    Activation self = *this;
    return OperatorRef(dim, [self](const Vector& x) { return self(x); }, RegularityTag::firmly_nonexpansive(), name());
}

Index FeedforwardNet::input_dim() const { return layers.empty() ? 0 : layers.front().W.cols(); }
Index FeedforwardNet::output_dim() const { return layers.empty() ? 0 : layers.back().W.rows(); }

void FeedforwardNet::validate() const {
    if (layers.empty()) throw std::invalid_argument("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& L = layers[i];
        std::ostringstream where;
        where << "layer " << i + 1 << ": ";
        if (L.b.size() != L.W.rows()) throw DimensionError(where.str() + "bias length differs from weight rows");
        if (i > 0 && L.W.cols() != layers[i - 1].W.rows())
            throw DimensionError(where.str() + "weight columns differ from previous layer width");
        if (L.act.kind == Activation::Kind::CustomProx && !L.act.f)
            throw std::invalid_argument(where.str() + "prox activation without a function");
        if (!L.W.allFinite() || !L.b.allFinite()) throw std::invalid_argument(where.str() + "non-finite parameters");
    }
}

Vector FeedforwardNet::layer(std::size_t i, const Vector& x) const {
    const auto& L = layers.at(i);
    return L.act(L.W * x + L.b);
}

Vector FeedforwardNet::operator()(const Vector& x) const {
    Vector y = x;
    for (std::size_t i = 0; i < layers.size(); ++i) y = layer(i, y);
    return y;
}

Matrix FeedforwardNet::end_to_end() const {
    Matrix W = layers.front().W;
    for (std::size_t i = 1; i < layers.size(); ++i) W = layers[i].W * W;
    return W;
}

OperatorRef FeedforwardNet::as_operator() const {
    validate();
    if (!square()) throw DimensionError("network input and output widths differ");
    FeedforwardNet self = *this;
    double bound = lipschitz_certificate(*this).lipschitz_bound;
    return OperatorRef(input_dim(), [self](const Vector& x) { return self(x); }, RegularityTag::lipschitz(bound),
                       "network");
}

namespace {

// norms[a][b] = ||W_b ... W_a||, 1-based inclusive, a <= b.
std::vector<std::vector<double>> partial_norms(const FeedforwardNet& net) {
    const std::size_t m = net.depth();
    std::vector<std::vector<double>> norms(m + 1, std::vector<double>(m + 1, 0.0));
    parallel_for(m, [&](std::size_t k) {
        const std::size_t a = k + 1;
        Matrix P = net.layers[a - 1].W;
        norms[a][a] = spectral_norm(P);
        for (std::size_t b = a + 1; b <= m; ++b) {
            P = net.layers[b - 1].W * P;
            norms[a][b] = spectral_norm(P);
        }
    });
    return norms;
}

double theta_from(const std::vector<std::vector<double>>& norms, std::size_t m) {
    // bit k of the mask set: cut after layer k+1
    double total = 0.0;
    const std::size_t masks = std::size_t{1} << (m - 1);
    for (std::size_t mask = 0; mask < masks; ++mask) {
        double prod = 1.0;
        std::size_t start = 1;
        for (std::size_t j = 1; j < m; ++j) {
            if (mask & (std::size_t{1} << (j - 1))) {
                prod *= norms[start][j];
                start = j + 1;
            }
        }
        prod *= norms[start][m];
        total += prod;
    }
    return total;
}

void require_depth(const FeedforwardNet& net) {
    net.validate();
    if (net.depth() > kMaxThetaDepth) {
        std::ostringstream os;
        os << "depth " << net.depth() << " exceeds " << kMaxThetaDepth
           << "; certify sub-networks separately and multiply their bounds";
        throw std::invalid_argument(os.str());
    }
}

}  // namespace

double theta(const FeedforwardNet& net) {
    require_depth(net);
    return theta_from(partial_norms(net), net.depth());
}

Certificate lipschitz_certificate(const FeedforwardNet& net) {
    require_depth(net);
    const std::size_t m = net.depth();
    auto norms = partial_norms(net);
    Certificate c;
    c.theta_m = theta_from(norms, m);
    c.lipschitz_bound = c.theta_m / std::ldexp(1.0, static_cast<int>(m) - 1);
    c.lower_bound = norms[1][m];
    c.upper_bound = 1.0;
    for (std::size_t i = 1; i <= m; ++i) c.upper_bound *= norms[i][i];
    const double slack = 1e-10 * (1.0 + c.upper_bound);
    c.sandwich_holds = c.lower_bound <= c.lipschitz_bound + slack && c.lipschitz_bound <= c.upper_bound + slack;

    bool nonneg = true;
    for (const auto& L : net.layers) nonneg = nonneg && L.act.separable() && (L.W.array() >= 0.0).all();
    if (nonneg) c.nonnegative_bound = c.lower_bound;
    if (net.square()) c.averaged_alpha = smallest_alpha(net);
    return c;
}

double averagedness_gap(const FeedforwardNet& net, double alpha) {
    require_depth(net);
    if (!net.square())
        throw DimensionError("averagedness test needs equal input and output widths (the Id term is undefined otherwise)");
    if (!(alpha >= 0.5 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [1/2, 1]");
    const std::size_t m = net.depth();
    const double p = std::ldexp(1.0, static_cast<int>(m));
    auto norms = partial_norms(net);
    Matrix W = net.end_to_end();
    Matrix shifted = W - p * (1.0 - alpha) * Matrix::Identity(W.rows(), W.cols());
    return spectral_norm(shifted) - norms[1][m] + 2.0 * theta_from(norms, m) - p * alpha;
}

bool averagedness_check(const FeedforwardNet& net, double alpha) {
    const double p = std::ldexp(1.0, static_cast<int>(net.depth()));
    return averagedness_gap(net, alpha) <= 1e-12 * p;
}

std::optional<double> smallest_alpha(const FeedforwardNet& net) {
    // The gap is nonincreasing in alpha: the norm term moves by at most 2^m per unit of alpha.
    if (averagedness_check(net, 0.5)) return 0.5;
    if (!averagedness_check(net, 1.0)) return std::nullopt;
    double lo = 0.5, hi = 1.0;
    while (hi - lo > 1e-9) {
        double mid = 0.5 * (lo + hi);
        (averagedness_check(net, mid) ? hi : lo) = mid;
    }
    return hi;
}

RecurrentResult recurrent_iterate(const FeedforwardNet& net, const RelaxationSchedule& lambda, const Vector& x0,
                                  const StopRule& stop) {
    net.validate();
    if (!net.square()) throw DimensionError("recurrent iteration needs equal input and output widths");
    if (x0.size() != net.input_dim()) throw DimensionError("x0 length differs from network width");
    stop.validate();

    RecurrentResult out;
    if (net.depth() <= kMaxThetaDepth) out.alpha = smallest_alpha(net);
    if (out.alpha) {
        auto v = validate_relaxation_schedule(*out.alpha, lambda);
        if (!v.valid) throw PreconditionError("recurrent relaxation", v.reason);
    }

    TraceRecorder rec(stop, x0);
    Vector x = x0;
    for (std::size_t k = 0;; ++k) {
        Vector Tx = net(x);
        if (rec.check((Tx - x).norm(), x)) break;
        Vector xn = x + lambda.at(k) * (Tx - x);
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    out.trace = rec.finish(x);
    if (out.alpha) {
        out.trace.metadata["alpha"] = std::to_string(*out.alpha);
    } else {
        out.trace.warnings.push_back(
            {"no-convergence-claim", "averagedness test fails for every alpha in [1/2, 1]; iterating without a guarantee"});
    }

    const std::size_t m = net.depth();
    out.states.resize(m);
    Vector prev = x;
    for (std::size_t i = 0; i + 1 < m; ++i) {
        out.states[i] = net.layer(i, prev);
        prev = out.states[i];
    }
    out.states[m - 1] = x;
    out.layer_residuals.resize(m);
    prev = x;
    for (std::size_t i = 0; i < m; ++i) {
        out.layer_residuals[i] = (out.states[i] - net.layer(i, prev)).norm();
        prev = out.states[i];
    }
    return out;
}

}  // namespace splitfix
