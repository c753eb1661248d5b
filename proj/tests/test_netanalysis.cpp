#include <doctest.h>

#include <cmath>
#include <functional>

#include "splitfix/checks.hpp"
#include "splitfix/errors.hpp"
#include "splitfix/netanalysis.hpp"
#include "support.hpp"

using namespace splitfix;
using oracle::vec;

namespace {

double opnorm(const Matrix& M) { return Eigen::JacobiSVD<Matrix>(M).singularValues()(0); }

// Sum over all ways of splitting layers 1..m into consecutive groups of the product of group norms.
double theta_oracle(const std::vector<Matrix>& W) {
    const std::size_t m = W.size();
    std::function<double(std::size_t)> from = [&](std::size_t start) -> double {
        if (start == m) return 1.0;
        double s = 0.0;
        Matrix P = W[start];
        for (std::size_t end = start; end < m; ++end) {
            if (end > start) P = W[end] * P;
            s += opnorm(P) * from(end + 1);
        }
        return s;
    };
    return from(0);
}

FeedforwardNet random_net(Rng& rng, const std::vector<Index>& widths, double scale, bool nonneg = false) {
    FeedforwardNet net;
    const Activation acts[] = {Activation::relu(), Activation::sigmoid(), Activation::identity(), Activation::softmax()};
    for (std::size_t i = 1; i < widths.size(); ++i) {
        Matrix W = scale * rng.normal_matrix(widths[i], widths[i - 1]);
        if (nonneg) W = W.cwiseAbs();
        Activation a = acts[rng.index(nonneg ? 3 : 4)];
        net.layers.push_back({W, rng.normal_vector(widths[i]), a});
    }
    return net;
}

FeedforwardNet scalar_net(std::vector<double> w, std::vector<double> b, Activation a = Activation::identity()) {
    FeedforwardNet net;
    for (std::size_t i = 0; i < w.size(); ++i) net.layers.push_back({Matrix::Constant(1, 1, w[i]), vec({b[i]}), a});
    return net;
}

double max_sampled_ratio(const FeedforwardNet& net, std::size_t pairs, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < pairs; ++k) {
        Vector x = 3.0 * rng.normal_vector(net.input_dim());
        Vector y = x + std::pow(10.0, rng.uniform(-3, 1)) * rng.normal_vector(net.input_dim());
        double d = (x - y).norm();
        if (d > 0) worst = std::max(worst, (net(x) - net(y)).norm() / d);
    }
    return worst;
}

}  // namespace

TEST_CASE("activations") {
    Vector x = vec({-2, 0, 0.5, 3});
    CHECK((Activation::relu()(x) - vec({0, 0, 0.5, 3})).norm() == 0.0);
    CHECK(Activation::sigmoid()(vec({0}))(0) == 0.0);
    CHECK(Activation::sigmoid()(vec({1}))(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0)) - 0.5));
    Vector s = Activation::softmax()(vec({1, 2, 3}));
    double Z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK((s - vec({std::exp(1.0) / Z, std::exp(2.0) / Z, std::exp(3.0) / Z})).norm() <= 1e-15);
    CHECK(Activation::softmax()(vec({1000, 1000}))(0) == doctest::Approx(0.5));
    CHECK((Activation::custom_prox(FunctionDescriptor::l1(1.0))(x) - vec({-1, 0, 0, 2})).norm() == 0.0);
    CHECK(Activation::parse("relu").kind == Activation::Kind::ReLU);
    CHECK_THROWS(Activation::parse("tanh"));

    SUBCASE("every activation is firmly nonexpansive on samples") {
        for (auto a : {Activation::relu(), Activation::sigmoid(), Activation::softmax(), Activation::identity(),
                       Activation::custom_prox(FunctionDescriptor::l1(0.7))}) {
            auto rep = check_firmly_nonexpansive(a.as_operator(5), 10000, 42, 1e-10,
                                                 [](Rng& r) { return Vector(4.0 * r.normal_vector(5)); });
            INFO(a.name());
            CHECK(rep.passed);
        }
    }
}

TEST_CASE("theta") {
    SUBCASE("one layer: the weight norm") {
        Matrix W = (Matrix(2, 2) << 3, 0, 0, -4).finished();
        FeedforwardNet net{{{W, Vector::Zero(2), Activation::relu()}}};
        CHECK(theta(net) == doctest::Approx(4.0).epsilon(1e-14));
    }
    SUBCASE("two unit scalars") {
        auto net = scalar_net({1, 1}, {0, 0});
        CHECK(theta(net) == doctest::Approx(2.0));
        CHECK(lipschitz_certificate(net).lipschitz_bound == doctest::Approx(1.0));
    }
    SUBCASE("nilpotent pair") {
        Matrix N = (Matrix(2, 2) << 0, 1, 0, 0).finished();
        FeedforwardNet net{{{N, Vector::Zero(2), Activation::relu()}, {N, Vector::Zero(2), Activation::relu()}}};
        auto c = lipschitz_certificate(net);
        CHECK(c.theta_m == doctest::Approx(1.0));
        CHECK(c.lipschitz_bound == doctest::Approx(0.5));
        CHECK(c.upper_bound == doctest::Approx(1.0));
        CHECK(c.lower_bound == 0.0);
        CHECK(c.sandwich_holds);
        CHECK(max_sampled_ratio(net, 10000, 8) <= 0.5 * (1 + 1e-9));
    }
    SUBCASE("matches a recursive evaluation") {
        Rng rng(77);
        for (std::size_t m = 1; m <= 6; ++m) {
            std::vector<Index> widths(m + 1);
            for (auto& w : widths) w = 2 + static_cast<Index>(rng.index(3));
            auto net = random_net(rng, widths, 1.0);
            std::vector<Matrix> W;
            for (auto& L : net.layers) W.push_back(L.W);
            CHECK(theta(net) == doctest::Approx(theta_oracle(W)).epsilon(1e-12));
        }
    }
    SUBCASE("depth cap") {
        auto net = scalar_net(std::vector<double>(13, 0.5), std::vector<double>(13, 0.0));
        CHECK_THROWS_AS(theta(net), std::invalid_argument);
        net.layers.pop_back();
        CHECK_NOTHROW(theta(net));
    }
    SUBCASE("broken chain") {
        FeedforwardNet net{{{Matrix::Ones(2, 3), Vector::Zero(2), Activation::relu()},
                            {Matrix::Ones(2, 3), Vector::Zero(2), Activation::relu()}}};
        CHECK_THROWS_AS(theta(net), DimensionError);
    }
}

TEST_CASE("Lipschitz certificates") {
    SUBCASE("identity weights") {
        FeedforwardNet net;
        for (int i = 0; i < 3; ++i) net.layers.push_back({Matrix::Identity(3, 3), Vector::Zero(3), Activation::relu()});
        auto c = lipschitz_certificate(net);
        CHECK(c.lower_bound == doctest::Approx(1.0));
        CHECK(c.lipschitz_bound == doctest::Approx(1.0));
        CHECK(c.upper_bound == doctest::Approx(1.0));
    }
    SUBCASE("sandwich and sampled ratios on seeded nets") {
        Rng rng(2024);
        for (int k = 0; k < 50; ++k) {
            std::size_t m = 1 + rng.index(4);
            std::vector<Index> widths(m + 1);
            for (auto& w : widths) w = 1 + static_cast<Index>(rng.index(4));
            auto net = random_net(rng, widths, 0.8);
            auto c = lipschitz_certificate(net);
            CHECK(c.sandwich_holds);
            CHECK(c.lower_bound <= c.lipschitz_bound * (1 + 1e-10) + 1e-12);
            CHECK(c.lipschitz_bound <= c.upper_bound * (1 + 1e-10) + 1e-12);
            if (k < 10) CHECK(max_sampled_ratio(net, 10000, 100 + k) <= c.lipschitz_bound * (1 + 1e-9));
        }
    }
    SUBCASE("nonnegative weights tighten to the end-to-end norm") {
        Rng rng(31);
        for (int k = 0; k < 10; ++k) {
            auto net = random_net(rng, {3, 4, 3, 2}, 0.7, true);
            auto c = lipschitz_certificate(net);
            REQUIRE(c.nonnegative_bound.has_value());
            CHECK(*c.nonnegative_bound == doctest::Approx(opnorm(net.end_to_end())));
            CHECK(*c.nonnegative_bound <= c.lipschitz_bound * (1 + 1e-12));
            CHECK(max_sampled_ratio(net, 10000, 500 + k) <= *c.nonnegative_bound * (1 + 1e-9));
        }
        auto mixed = scalar_net({1, -1}, {0, 0});
        CHECK_FALSE(lipschitz_certificate(mixed).nonnegative_bound.has_value());
    }
}

TEST_CASE("averagedness test") {
    SUBCASE("identity weight holds with equality at 1/2") {
        FeedforwardNet net{{{Matrix::Identity(2, 2), Vector::Zero(2), Activation::relu()}}};
        CHECK(averagedness_gap(net, 0.5) == doctest::Approx(0.0));
        CHECK(averagedness_check(net, 0.5));
        CHECK(smallest_alpha(net) == 0.5);
    }
    SUBCASE("negated scalar is nonexpansive only") {
        auto net = scalar_net({-1}, {0});
        // |-1 - 2(1-a)| - 1 + 2 - 2a = 4 - 4a
        for (double a : {0.5, 0.7, 0.9, 1.0}) CHECK(averagedness_gap(net, a) == doctest::Approx(4 - 4 * a));
        auto a = smallest_alpha(net);
        REQUIRE(a.has_value());
        CHECK(*a == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("zero weight") {
        auto net = scalar_net({0}, {3});
        CHECK(averagedness_check(net, 0.5));
    }
    SUBCASE("large weights fail everywhere") {
        auto net = scalar_net({3}, {0});
        CHECK_FALSE(smallest_alpha(net).has_value());
        CHECK_FALSE(lipschitz_certificate(net).averaged_alpha.has_value());
    }
    SUBCASE("passing nets satisfy the sampled averagedness inequality") {
        Rng rng(99);
        int passed = 0;
        for (int k = 0; k < 20; ++k) {
            std::size_t m = 1 + rng.index(3);
            std::vector<Index> widths(m + 1, 3);
            if (m > 1) widths[1] = 2 + static_cast<Index>(rng.index(3));
            auto net = random_net(rng, widths, 0.25);
            auto a = smallest_alpha(net);
            if (!a) continue;
            ++passed;
            CHECK(averagedness_check(net, *a));
            if (*a > 0.5 + 1e-6) CHECK_FALSE(averagedness_check(net, *a - 1e-6));
            OperatorRef T(3, [net](const Vector& x) { return net(x); }, RegularityTag::averaged(*a));
            auto rep = check_averaged(T, *a, 10000, 7 + k, 1e-9, [](Rng& r) { return Vector(3.0 * r.normal_vector(3)); });
            CHECK(rep.passed);
        }
        CHECK(passed >= 10);
    }
    SUBCASE("non-square network") {
        FeedforwardNet net{{{Matrix::Ones(2, 3), Vector::Zero(2), Activation::relu()}}};
        CHECK_THROWS_AS(averagedness_check(net, 0.5), DimensionError);
        CHECK_FALSE(lipschitz_certificate(net).averaged_alpha.has_value());
    }
}

TEST_CASE("recurrent iteration") {
    StopRule stop;
    stop.max_iter = 100000;
    stop.residual_tol = 1e-12;
    SUBCASE("one ReLU layer") {
        // x = max(0, x/2 + 1)
        auto net = scalar_net({0.5}, {1}, Activation::relu());
        auto r = recurrent_iterate(net, RelaxationSchedule::constant(1.0), vec({-7}), stop);
        CHECK(r.trace.status == Status::Converged);
        CHECK(r.trace.x(0) == doctest::Approx(2.0).epsilon(1e-11));
        CHECK(r.layer_residuals[0] <= 1e-7);
        REQUIRE(r.alpha.has_value());
        CHECK(*r.alpha == 0.5);
    }
    SUBCASE("zero weights reach the activated bias in one step") {
        FeedforwardNet net{{{Matrix::Zero(3, 3), vec({-1, 0.5, 2}), Activation::relu()}}};
        auto r = recurrent_iterate(net, RelaxationSchedule::constant(1.0), vec({4, 4, 4}), stop);
        CHECK(r.trace.iterations == 1);
        CHECK((r.trace.x - vec({0, 0.5, 2})).norm() == 0.0);
    }
    SUBCASE("certified two-layer net") {
        Rng rng(12);
        FeedforwardNet net;
        net.layers.push_back({0.3 * rng.normal_matrix(4, 3), rng.normal_vector(4), Activation::relu()});
        net.layers.push_back({0.3 * rng.normal_matrix(3, 4), rng.normal_vector(3), Activation::sigmoid()});
        auto a = smallest_alpha(net);
        REQUIRE(a.has_value());
        auto r = recurrent_iterate(net, RelaxationSchedule::constant(1.0 / (2.0 * *a)), vec({5, -5, 1}), stop);
        CHECK(r.trace.status == Status::Converged);
        for (std::size_t i = 1; i < r.trace.residuals.size(); ++i)
            CHECK(r.trace.residuals[i] <= r.trace.residuals[i - 1] * (1 + 1e-12) + 1e-15);
        for (double e : r.layer_residuals) CHECK(e <= 1e-7);
        // each state is a prox point: for ReLU, p >= 0 and <y - p, u - p> <= 0 for y >= 0
        Vector u = net.layers[0].W * r.states[1] + net.layers[0].b;
        const Vector& p = r.states[0];
        CHECK(p.minCoeff() >= 0.0);
        Rng s(5);
        for (int k = 0; k < 1000; ++k) {
            Vector y = s.normal_vector(4).cwiseAbs() * 3.0;
            CHECK((y - p).dot(u - p) <= 1e-7);
        }
        // the fixed point solves the last layer's equation with x_0 = x_m
        CHECK((net(r.trace.x) - r.trace.x).norm() <= 1e-9);
    }
    SUBCASE("schedule outside the certified band") {
        auto net = scalar_net({0.5}, {1}, Activation::relu());
        CHECK_THROWS_AS(recurrent_iterate(net, RelaxationSchedule::constant(2.5), vec({0}), stop), PreconditionError);
    }
    SUBCASE("uncertified net runs with a warning") {
        auto net = scalar_net({-1.5}, {0}, Activation::identity());
        StopRule s = stop;
        s.max_iter = 50;
        auto r = recurrent_iterate(net, RelaxationSchedule::constant(0.5), vec({1}), s);
        REQUIRE_FALSE(r.trace.warnings.empty());
        CHECK(r.trace.warnings[0].code == "no-convergence-claim");
    }
}
