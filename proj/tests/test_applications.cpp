#include <doctest.h>

#include <cmath>

#include "splitfix/applications.hpp"
#include "splitfix/errors.hpp"
#include "support.hpp"

using namespace splitfix;
using oracle::vec;

namespace {

StopRule tight(std::size_t max_iter = 200000, double tol = 1e-11) {
    StopRule s;
    s.max_iter = max_iter;
    s.residual_tol = tol;
    s.snapshot_every = 1;
    return s;
}

Matrix mat(Index r, Index c, std::initializer_list<double> v) {
    Matrix m(r, c);
    Index k = 0;
    for (double e : v) {
        m(k / c, k % c) = e;
        ++k;
    }
    return m;
}

// Singular value soft-thresholding through Eigen's own SVD.
Matrix svt(const Matrix& X, double t) {
    Eigen::JacobiSVD<Matrix> s(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vector sig = (s.singularValues().array() - t).max(0.0).matrix();
    return s.matrixU() * sig.asDiagonal() * s.matrixV().transpose();
}

double nuclear(const Matrix& X) { return Eigen::JacobiSVD<Matrix>(X).singularValues().sum(); }

}  // namespace

// ---- feasibility ----------------------------------------------------------------------

TEST_CASE("pocs reaches the intersection of two lines") {
    // x1 + x2 = 2 and x1 - x2 = 0
    Matrix A = mat(2, 2, {1, 1, 1, -1});
    Vector expect = A.lu().solve(vec({2, 0}));
    FeasibilitySpec spec;
    spec.sets = {SetDescriptor::hyperplane(vec({1, 1}), 2), SetDescriptor::hyperplane(vec({1, -1}), 0)};
    auto out = pocs(spec, vec({5, -7}), PocsMode::Sequential, tight());
    CHECK(out.trace.status == Status::Converged);
    CHECK((out.trace.x - expect).norm() <= 1e-9);
    CHECK(out.max_distance <= 1e-8);
    CHECK_FALSE(out.cycle.has_value());

    auto bary = pocs(spec, vec({5, -7}), PocsMode::Barycentric, tight());
    CHECK((bary.trace.x - expect).norm() <= 1e-9);
}

TEST_CASE("pocs on identical sets settles after one sweep") {
    FeasibilitySpec spec;
    auto ball = SetDescriptor::ball(vec({1, 1}), 1.0);
    spec.sets = {ball, ball, ball};
    auto out = pocs(spec, vec({4, 5}), PocsMode::Sequential, tight());
    CHECK(out.trace.status == Status::Converged);
    CHECK(out.trace.iterations == 1);
}

TEST_CASE("barycentric projections on parallel lines reach the midline") {
    // d^2 to y = 0 and y = 2, equal weights: minimized on y = 1 with x untouched by either projection
    FeasibilitySpec spec;
    spec.sets = {SetDescriptor::hyperplane(vec({0, 1}), 0), SetDescriptor::hyperplane(vec({0, 1}), 2)};
    auto out = pocs(spec, vec({3, 5}), PocsMode::Barycentric, tight());
    CHECK(out.trace.status == Status::Converged);
    CHECK((out.trace.x - vec({3, 1})).norm() <= 1e-12);
    CHECK(out.max_distance == doctest::Approx(1.0));
}

TEST_CASE("sequential pocs on disjoint sets reports a cycle") {
    FeasibilitySpec spec;
    spec.sets = {SetDescriptor::interval(0, 1), SetDescriptor::interval(2, 3), SetDescriptor::interval(5, 6)};
    auto out = pocs(spec, vec({10}), PocsMode::Sequential, tight());
    REQUIRE(out.cycle.has_value());
    CHECK(out.trace.metadata.at("rerouted") == "cycles");
    REQUIRE(!out.trace.warnings.empty());
    CHECK(out.trace.warnings.back().code == "inconsistent-sets");
    // x1 = P1 x2, x2 = P2 x3, x3 = P3 x1 from x1 = 1: x3 = 5, x2 = 3
    CHECK(out.cycle->limits[0](0) == doctest::Approx(1.0));
    CHECK(out.cycle->limits[1](0) == doctest::Approx(3.0));
    CHECK(out.cycle->limits[2](0) == doctest::Approx(5.0));
    for (double r : out.cycle->residuals) CHECK(r <= 1e-8);
}

TEST_CASE("split feasibility") {
    auto C = SetDescriptor::box(vec({0, 0}), vec({1, 1}));
    auto D = SetDescriptor::point(vec({2}));
    LinMap L = LinMap::from_matrix(mat(1, 2, {1, 1}));

    SUBCASE("unique point of the box on the line") {
        auto t = split_feasibility(C, D, L, 0.5, RelaxationSchedule::constant(1.0), vec({0, 0.3}), tight());
        CHECK(t.status == Status::Converged);
        CHECK((t.x - vec({1, 1})).norm() <= 1e-9);
    }
    SUBCASE("relaxed run reaches the same point") {
        auto t = split_feasibility(C, D, L, 0.9, RelaxationSchedule::constant(0.7), vec({0.2, 0.1}), tight());
        CHECK((t.x - vec({1, 1})).norm() <= 1e-9);
    }
    SUBCASE("identity map reduces to alternating projections") {
        auto C2 = SetDescriptor::ball(vec({0, 0}), 1.0);
        auto D2 = SetDescriptor::halfspace(vec({-1, 0}), -0.5);  // x1 >= 0.5
        auto t = split_feasibility(C2, D2, LinMap::identity(2), 1.0, RelaxationSchedule::constant(1.0),
                                   vec({-2, 3}), tight(5));
        Vector x = vec({-2, 3});
        for (int k = 0; k < 5; ++k) x = project(C2, project(D2, x));
        CHECK((t.x - x).norm() <= 1e-14);
    }
    SUBCASE("step outside (0, 2/||L||^2) is rejected") {
        CHECK_THROWS_AS(split_feasibility(C, D, L, 1.0, RelaxationSchedule::constant(1.0), vec({0, 0}), tight()),
                        PreconditionError);
    }
}

TEST_CASE("least-squares feasibility under a hard constraint") {
    StopRule s = tight();
    SUBCASE("single unreachable target clamps") {
        FeasibilitySpec spec;
        spec.sets = {SetDescriptor::point(vec({3}))};
        spec.hard = SetDescriptor::interval(0, 1);
        auto t = inconsistent_feasibility(spec, 1.0, BlockSchedule::full(1), vec({0.5}), s);
        CHECK(t.x(0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("two targets average on the boundary") {
        FeasibilitySpec spec;
        spec.sets = {SetDescriptor::point(vec({3})), SetDescriptor::point(vec({-1}))};
        spec.hard = SetDescriptor::interval(0, 1);
        auto t = inconsistent_feasibility(spec, 1.0, BlockSchedule::round_robin(2, 1), vec({0.0}), s);
        CHECK(t.status == Status::Converged);
        CHECK(t.x(0) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("consistent instance yields a feasible point") {
        FeasibilitySpec spec;
        Matrix M = mat(1, 2, {1, 2});
        spec.sets = {SetDescriptor::interval(1, 1.5), SetDescriptor::ball(vec({1, 0}), 1.0)};
        spec.maps = {LinMap::from_matrix(M), std::nullopt};
        spec.weights = {0.3, 0.7};
        spec.hard = SetDescriptor::box(vec({0, 0}), vec({2, 2}));
        auto t = inconsistent_feasibility(spec, 0.3, BlockSchedule::full(2), vec({2, 2}), s);
        CHECK(t.status == Status::Converged);
        CHECK(distance(*spec.hard, t.x) <= 1e-12);
        CHECK(distance(spec.sets[0], M * t.x) <= 1e-8);
        CHECK(distance(spec.sets[1], t.x) <= 1e-8);
    }
    SUBCASE("band violation") {
        FeasibilitySpec spec;
        spec.sets = {SetDescriptor::point(vec({3}))};
        spec.hard = SetDescriptor::interval(0, 1);
        CHECK_THROWS_AS(inconsistent_feasibility(spec, 2.0, BlockSchedule::full(1), vec({0.5}), s), PreconditionError);
    }
}

// ---- estimation ----------------------------------------------------------------------------

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double logistic_objective(const Matrix& A, const Vector& eta, double alpha, const Vector& x) {
    Vector t = A * x;
    double s = alpha * x.lpNorm<1>();
    for (Index i = 0; i < t.size(); ++i) s += std::log(1.0 + std::exp(t(i))) - eta(i) * t(i);
    return s;
}

// Long proximal-gradient run on the logistic objective.
Vector logistic_oracle(const Matrix& A, const Vector& eta, double alpha) {
    double Lip = 0.25 * Eigen::JacobiSVD<Matrix>(A).singularValues()(0) * Eigen::JacobiSVD<Matrix>(A).singularValues()(0);
    double tau = 1.0 / Lip;
    Vector x = Vector::Zero(A.cols());
    for (long n = 0; n < 10000000; ++n) {
        Vector t = A * x;
        for (Index i = 0; i < t.size(); ++i) t(i) = sigmoid(t(i)) - eta(i);
        Vector u = x - tau * (A.transpose() * t);
        Vector xn = u;
        for (Index j = 0; j < u.size(); ++j) {
            double a = std::abs(u(j)) - tau * alpha;
            xn(j) = a > 0 ? std::copysign(a, u(j)) : 0.0;
        }
        bool done = (xn - x).norm() == 0.0;
        x = xn;
        if (done) break;
    }
    return x;
}

}  // namespace

TEST_CASE("penalized regression") {
    SUBCASE("one row, square loss") {
        // |x| + (x - 3)^2 / 2: stationarity (x - 3) + 1 = 0
        Matrix A = mat(1, 1, {1});
        for (auto b : {Backend::BlockUpdate, Backend::ForwardBackward}) {
            RegressionOptions o;
            o.backend = b;
            auto t = lasso_logistic(A, vec({3}), 1.0, vec({0}), o, tight());
            CHECK(t.status == Status::Converged);
            CHECK(t.x(0) == doctest::Approx(2.0).epsilon(1e-9));
        }
    }
    SUBCASE("large penalty gives zero") {
        Rng rng(11);
        Matrix A = rng.normal_matrix(4, 3);
        Vector eta = rng.normal_vector(4);
        double alpha = 1.01 * (A.transpose() * eta).cwiseAbs().maxCoeff();
        // 0 is optimal iff ||A^T (A 0 - eta)||_inf <= alpha
        REQUIRE((A.transpose() * eta).cwiseAbs().maxCoeff() <= alpha);
        RegressionOptions o;
        auto t = lasso_logistic(A, eta, alpha, vec({1, -1, 2}), o, tight());
        CHECK(t.x.norm() <= 1e-9);
    }
    SUBCASE("logistic fixture against a long proximal-gradient run") {
        Rng rng(20240917);
        Matrix A = rng.normal_matrix(4, 2);
        Vector eta = vec({1, 0, 1, 0});
        const double alpha = 0.1;
        Vector xo = logistic_oracle(A, eta, alpha);
        double fo = logistic_objective(A, eta, alpha, xo);
        for (auto b : {Backend::BlockUpdate, Backend::ForwardBackward}) {
            RegressionOptions o;
            o.loss = Loss::Logistic;
            o.backend = b;
            auto t = lasso_logistic(A, eta, alpha, Vector::Zero(2), o, tight(500000, 1e-12));
            CHECK(std::abs(logistic_objective(A, eta, alpha, t.x) - fo) <= 1e-6);
            CHECK(regression_objective(A, eta, alpha, Loss::Logistic, t.x) ==
                  doctest::Approx(logistic_objective(A, eta, alpha, t.x)));
        }
    }
    SUBCASE("row subsets") {
        Rng rng(5);
        Matrix A = rng.normal_matrix(6, 3);
        Vector eta = rng.normal_vector(6);
        auto ref = oracle::lasso_by_prox_gradient(A, eta, 0.2, 200000);
        RegressionOptions o;
        o.schedule = BlockSchedule::round_robin(6, 2);
        auto t = lasso_logistic(A, eta, 0.2, Vector::Zero(3), o, tight(500000, 1e-12));
        CHECK((t.x - ref.x).norm() <= 1e-7);
    }
    SUBCASE("unknown loss name") { CHECK_THROWS_AS(parse_loss("hinge"), std::invalid_argument); }
}

// ---- matrix problems ------------------------------------------------------------------------

TEST_CASE("graphical lasso") {
    SUBCASE("no penalty inverts a diagonal O") {
        Matrix O = mat(2, 2, {2, 0, 0, 4});
        auto t = graphical_lasso(O, 0.0, 1.0, RelaxationSchedule::constant(1.0), Matrix::Identity(2, 2), tight());
        CHECK(t.status == Status::Converged);
        CHECK((unflatten_rowmajor(t.x, 2, 2) - mat(2, 2, {0.5, 0, 0, 0.25})).norm() <= 1e-9);
    }
    SUBCASE("scalar with penalty") {
        // -1/x + 1 + 0.5 = 0
        auto t = graphical_lasso(mat(1, 1, {1}), 0.5, 0.7, RelaxationSchedule::constant(1.0), mat(1, 1, {3}), tight());
        CHECK(t.x(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-10));
    }
    SUBCASE("identity stays identity") {
        auto t = graphical_lasso(Matrix::Identity(3, 3), 0.0, 1.0, RelaxationSchedule::constant(1.0),
                                 Matrix::Zero(3, 3), tight());
        CHECK((unflatten_rowmajor(t.x, 3, 3) - Matrix::Identity(3, 3)).norm() <= 1e-9);
    }
    SUBCASE("iterates stay symmetric positive definite") {
        Rng rng(3);
        Matrix G = rng.normal_matrix(6, 4);
        Matrix O = G.transpose() * G / 6.0;
        auto t = graphical_lasso(O, 0.1, 0.5, RelaxationSchedule::constant(1.5), Matrix::Zero(4, 4), tight());
        CHECK(t.status == Status::Converged);
        CHECK(std::stod(t.metadata.at("min_eigenvalue")) > 0);
        for (const auto& s : t.snapshots) {
            Matrix X = unflatten_rowmajor(s, 4, 4);
            CHECK((X - X.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
            CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(X).eigenvalues().minCoeff() > 0);
        }
        // stationarity: -X^{-1} + O + chi S = 0 with S a sign pattern of X
        Matrix X = unflatten_rowmajor(t.x, 4, 4);
        Matrix S = -(O - X.inverse()) / 0.1;
        for (Index i = 0; i < 16; ++i) {
            double x = X.data()[i], s = S.data()[i];
            if (std::abs(x) > 1e-8) CHECK(s == doctest::Approx(x > 0 ? 1.0 : -1.0).epsilon(1e-5));
            else CHECK(std::abs(s) <= 1.0 + 1e-5);
        }
    }
    SUBCASE("non-symmetric O is rejected") {
        CHECK_THROWS_AS(graphical_lasso(mat(2, 2, {1, 2, 0, 1}), 0.1, 1.0, RelaxationSchedule::constant(1.0),
                                        Matrix::Zero(2, 2), tight()),
                        std::invalid_argument);
    }
}

TEST_CASE("robust PCA") {
    auto one = RelaxationSchedule::constant(1.0);
    SUBCASE("zero data") {
        auto r = robust_pca(Matrix::Zero(3, 3), 0.5, 1.0, one, tight());
        CHECK(r.X.norm() <= 1e-12);
        CHECK(r.Y.norm() <= 1e-12);
    }
    SUBCASE("large penalty keeps everything in the low-rank part") {
        Vector u = vec({1, -2, 0.5, 1}), v = vec({0.3, 1, -1, 2});
        Matrix O = u * v.transpose();
        const double chi = 1.0;  // rank-one O: normalized u v^T has entries <= 1
        auto r = robust_pca(O, chi, 1.0, one, tight(200000, 1e-10));
        CHECK(r.trace.status == Status::Converged);
        CHECK(r.X.cwiseAbs().maxCoeff() <= 1e-6);
        double f = nuclear(r.Y) + chi * r.X.cwiseAbs().sum();
        CHECK(f <= nuclear(O) + 1e-8);
        CHECK(f <= chi * O.cwiseAbs().sum() + 1e-8);
    }
    SUBCASE("rank one plus sparse") {
        Rng rng(20240917);
        Vector u = rng.normal_vector(5), v = rng.normal_vector(5);
        Matrix O = u * v.transpose();
        O(0, 3) += 4.0;
        O(2, 1) -= 3.0;
        O(4, 4) += 5.0;
        const double chi = 1.0 / std::sqrt(5.0);
        StopRule s = tight(400000, 1e-8);
        s.snapshot_every = 50;
        auto r = robust_pca(O, chi, 1.0, one, s);
        CHECK(r.trace.status == Status::Converged);
        CHECK(r.trace.final_residual() <= 1e-8);
        double f = rpca_objective(chi, r.X, r.Y);
        CHECK(f == doctest::Approx(nuclear(r.Y) + chi * r.X.cwiseAbs().sum()));
        CHECK(f <= nuclear(O) + 1e-9);
        CHECK(f <= chi * O.cwiseAbs().sum() + 1e-9);
        CHECK((r.X + r.Y - O).cwiseAbs().maxCoeff() <= 1e-12);
        for (const auto& snap : r.trace.snapshots) {
            Matrix X = unflatten_rowmajor(snap.head(25), 5, 5), Y = unflatten_rowmajor(snap.tail(25), 5, 5);
            CHECK((X + Y - O).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
    SUBCASE("chi must be positive") { CHECK_THROWS(robust_pca(Matrix::Ones(2, 2), 0.0, 1.0, one, tight())); }
}

TEST_CASE("matrix completion") {
    Rng rng(9);
    Matrix O = rng.normal_matrix(4, 4);
    Matrix full = Matrix::Ones(4, 4);
    SUBCASE("full observation without penalty") {
        auto t = matrix_completion(O, full, 0.0, 1.0, std::nullopt, Matrix::Zero(4, 4), tight());
        CHECK((unflatten_rowmajor(t.x, 4, 4) - O).norm() <= 1e-12);
    }
    SUBCASE("full observation is one singular value threshold") {
        auto t = matrix_completion(O, full, 0.3, 1.0, std::nullopt, Matrix::Zero(4, 4), tight());
        CHECK((unflatten_rowmajor(t.x, 4, 4) - svt(O, 0.3)).norm() <= 1e-10);
    }
    SUBCASE("rank one, 60 percent observed") {
        Matrix X0 = rng.normal_vector(4) * rng.normal_vector(4).transpose();
        Matrix mask(4, 4);
        Rng mr(20240917);
        for (Index i = 0; i < 16; ++i) mask.data()[i] = mr.bernoulli(0.6) ? 1.0 : 0.0;
        Matrix Om = mask.cwiseProduct(X0);
        const double chi = 0.05;
        // Long forward-backward run with step 1 using Eigen's SVD.
        Matrix Xo = Matrix::Zero(4, 4);
        for (long n = 0; n < 10000000; ++n) {
            Matrix Xn = svt(Xo - (mask.cwiseProduct(Xo) - Om), chi);
            bool done = (Xn - Xo).norm() <= 1e-15;
            Xo = Xn;
            if (done) break;
        }
        double fo = 0.5 * (mask.cwiseProduct(Xo) - Om).squaredNorm() + chi * nuclear(Xo);
        auto t = matrix_completion(Om, mask, chi, 1.0, std::nullopt, Matrix::Zero(4, 4), tight(500000, 1e-12));
        double f = completion_objective(Om, mask, chi, unflatten_rowmajor(t.x, 4, 4));
        CHECK(std::abs(f - fo) <= 1e-6);
        REQUIRE(t.objective.size() > 2);
        CHECK(t.objective.back() <= t.objective.front());
    }
}

// ---- cycles ----------------------------------------------------------------------------------

TEST_CASE("cycles") {
    SUBCASE("two disjoint intervals") {
        auto c = projection_cycles({SetDescriptor::interval(0, 1), SetDescriptor::interval(2, 3)}, vec({-4}), tight());
        CHECK(c.limits[0](0) == doctest::Approx(1.0));
        CHECK(c.limits[1](0) == doctest::Approx(2.0));
        for (double r : c.residuals) CHECK(r <= 1e-8);
    }
    SUBCASE("intersecting sets collapse to a common point") {
        auto c = projection_cycles({SetDescriptor::ball(vec({0, 0}), 1), SetDescriptor::halfspace(vec({1, 0}), 0.2),
                                    SetDescriptor::ball(vec({0.5, 0}), 1)},
                                   vec({3, 3}), tight());
        for (std::size_t i = 1; i < c.limits.size(); ++i) CHECK((c.limits[i] - c.limits[0]).norm() <= 1e-8);
    }
    SUBCASE("proximal cycle") {
        // x1 = x2 / 2, x2 = (x1 + 4) / 2
        Matrix M = mat(2, 2, {1, -0.5, -0.5, 1});
        Vector expect = M.lu().solve(vec({0, 2}));
        auto c = proximal_cycles({FunctionDescriptor::sq_distance_half(vec({0})), FunctionDescriptor::sq_distance_half(vec({4}))},
                                 vec({10}), tight());
        CHECK(c.limits[0](0) == doctest::Approx(expect(0)).epsilon(1e-10));
        CHECK(c.limits[1](0) == doctest::Approx(expect(1)).epsilon(1e-10));
        CHECK(expect(0) == doctest::Approx(4.0 / 3.0));
    }
    SUBCASE("one set is not a cycle") {
        CHECK_THROWS(projection_cycles({SetDescriptor::interval(0, 1)}, vec({0}), tight()));
    }
}

// ---- games -------------------------------------------------------------------------------

TEST_CASE("Nash equilibria by forward-backward-forward") {
    auto R = SetDescriptor::whole_space(1);
    SUBCASE("quadratic players with bilinear coupling") {
        // x1 + x2 = 0 and x2 - x1 = 0
        auto game = bilinear_game(1, 1, mat(1, 1, {1}), R, R);
        CHECK(*game.lipschitz == doctest::Approx(2.0));
        auto t = nash_fbf(game, StepSize(), 0.05, vec({1, -2}), vec({0, 0}), tight());
        CHECK(t.primal.status == Status::Converged);
        CHECK(t.primal.x.norm() <= 1e-9);
        for (double r : best_response_residual(game, t.primal.x)) CHECK(r <= 1e-6);
    }
    SUBCASE("pure bilinear coupling") {
        auto game = bilinear_game(0, 0, mat(1, 1, {1}), R, R);
        auto t = nash_fbf(game, StepSize(), 0.05, vec({1, -2}), vec({0, 0}), tight(500000, 1e-10));
        CHECK(t.primal.status == Status::Converged);
        CHECK(t.primal.x.norm() <= 1e-8);
    }
    SUBCASE("decoupled players") {
        auto C1 = SetDescriptor::interval(1, 2), C2 = SetDescriptor::interval(-3, -1);
        auto game = bilinear_game(1, 1, Matrix::Zero(1, 1), C1, C2);
        auto t = nash_fbf(game, StepSize(), 0.05, vec({5, 5}), vec({0, 0}), tight());
        // each player minimizes x^2/2 over its interval
        CHECK(t.primal.x(0) == doctest::Approx(project(C1, vec({0}))(0)).epsilon(1e-9));
        CHECK(t.primal.x(1) == doctest::Approx(project(C2, vec({0}))(0)).epsilon(1e-9));
        for (double r : best_response_residual(game, t.primal.x)) CHECK(r <= 1e-6);
    }
    SUBCASE("step band") {
        auto game = bilinear_game(1, 1, mat(1, 1, {1}), R, R);
        CHECK_THROWS_AS(nash_fbf(game, 0.5, 0.05, vec({1, 1}), vec({0, 0}), tight()), PreconditionError);
        CHECK_THROWS_AS(nash_fbf(game, StepSize(), 0.3, vec({1, 1}), vec({0, 0}), tight()), std::invalid_argument);
    }
}

TEST_CASE("Nash equilibria by three-operator splitting") {
    auto R = SetDescriptor::whole_space(1);
    auto sq = FunctionDescriptor::sq_norm_half();
    SUBCASE("two players sharing a quadratic penalty") {
        auto game = chain_game({mat(1, 1, {1}), mat(1, 1, {1})}, {vec({0}), vec({0})}, {sq, sq}, {R, R});
        CHECK(*game.cocoercive == doctest::Approx(0.5));
        auto t = nash_dy(game, 0.5, RelaxationSchedule::constant(1.0), vec({3, -1}), tight());
        CHECK(t.status == Status::Converged);
        CHECK(t.x.norm() <= 1e-9);
        for (double r : best_response_residual(game, t.x)) CHECK(r <= 1e-6);
        auto bad = best_response_residual(game, vec({0.1, 0}));
        CHECK(*std::max_element(bad.begin(), bad.end()) >= 1e-3);
    }
    SUBCASE("proximal cycles as an equilibrium") {
        auto a = FunctionDescriptor::sq_distance_half(vec({0})), b = FunctionDescriptor::sq_distance_half(vec({4}));
        auto game = chain_game({mat(1, 1, {-1}), mat(1, 1, {1})}, {vec({0}), vec({0})}, {a, b}, {R, R});
        auto t = nash_dy(game, 0.5, RelaxationSchedule::constant(1.0), vec({0, 0}), tight());
        auto c = proximal_cycles({a, b}, vec({0}), tight());
        CHECK(t.x(0) == doctest::Approx(c.limits[0](0)).epsilon(1e-9));
        CHECK(t.x(1) == doctest::Approx(c.limits[1](0)).epsilon(1e-9));
        for (double r : best_response_residual(game, t.x)) CHECK(r <= 1e-6);
    }
    SUBCASE("zero coupling") {
        auto a = FunctionDescriptor::sq_distance_half(vec({2, -1})), b = FunctionDescriptor::l1(1.0);
        auto game = chain_game({Matrix::Zero(1, 2), Matrix::Zero(1, 2)}, {vec({0}), vec({0})}, {a, b},
                               {SetDescriptor::whole_space(2), SetDescriptor::box(vec({0.5, -3}), vec({4, 4}))});
        auto t = nash_dy(game, 1.0, RelaxationSchedule::constant(1.0), Vector::Zero(4), tight());
        // player 1: the point (2,-1); player 2: |x| over the box, minimized at (0.5, 0)
        CHECK((t.x - vec({2, -1, 0.5, 0})).norm() <= 1e-9);
        game.best_response = {[](const Vector&) { return vec({2, -1}); }, [](const Vector&) { return vec({0.5, 0}); }};
        for (double r : best_response_residual(game, t.x)) CHECK(r <= 1e-9);
    }
    SUBCASE("three players with constraints") {
        std::vector<Matrix> L = {mat(1, 1, {1}), mat(1, 1, {-2}), mat(1, 1, {0.5})};
        std::vector<Vector> o = {vec({1}), vec({-1}), vec({2})};
        auto z = FunctionDescriptor::zero();
        auto game = chain_game(L, o, {sq, z, sq},
                               {SetDescriptor::interval(-1, 1), SetDescriptor::interval(0, 3), R});
        double beta = *game.cocoercive;
        CHECK(beta == doctest::Approx(1.0 / 8.0));
        auto t = nash_dy(game, beta, RelaxationSchedule::constant(1.0), Vector::Zero(3), tight(400000));
        CHECK(t.status == Status::Converged);
        for (double r : best_response_residual(game, t.x)) CHECK(r <= 1e-6);
    }
    SUBCASE("step outside (0, 2 beta)") {
        auto game = chain_game({mat(1, 1, {1}), mat(1, 1, {1})}, {vec({0}), vec({0})}, {sq, sq}, {R, R});
        CHECK_THROWS_AS(nash_dy(game, 1.0, RelaxationSchedule::constant(1.0), vec({0, 0}), tight()), PreconditionError);
    }
    SUBCASE("multidimensional player without an oracle") {
        auto game = chain_game({Matrix::Identity(2, 2), Matrix::Identity(2, 2)}, {vec({0, 0}), vec({0, 0})}, {sq, sq},
                               {SetDescriptor::whole_space(2), SetDescriptor::whole_space(2)});
        CHECK_THROWS_AS(best_response_residual(game, Vector::Zero(4)), std::invalid_argument);
    }
}

TEST_CASE("golden section on convex functions") {
    CHECK(golden_section_min([](double t) { return (t - 7.5) * (t - 7.5); }, 0.0) == doctest::Approx(7.5).epsilon(1e-7));
    CHECK(golden_section_min([](double t) { return std::abs(t + 100.0); }, 3.0) == doctest::Approx(-100.0).epsilon(1e-9));
    auto barrier = [](double t) { return t < 1 ? std::numeric_limits<double>::infinity() : t; };
    CHECK(golden_section_min(barrier, 5.0) == doctest::Approx(1.0).epsilon(1e-9));
}

// ---- plug-and-play ----------------------------------------------------------------------------

namespace {

OperatorRef smoother(Index n) {
    return OperatorRef(n, [](const Vector& x) -> Vector { return 0.5 * x + Vector::Constant(x.size(), 0.5 * x.mean()); },
                       RegularityTag::firmly_nonexpansive(), "smoother");
}

Matrix smoother_matrix(Index n) { return 0.5 * Matrix::Identity(n, n) + Matrix::Constant(n, n, 0.5 / double(n)); }

}  // namespace

TEST_CASE("plug-and-play forward-backward") {
    Vector o = vec({1, -2, 0.5, 3});
    auto f = FunctionDescriptor::sq_distance_half(o);
    SUBCASE("proximal denoiser matches forward-backward") {
        auto h = FunctionDescriptor::l1(0.3);
        const double g = 1.2;
        auto lam = RelaxationSchedule::constant(0.8);
        auto a = pnp_fb({prox_op(h, g, 4), f}, g, lam, Vector::Zero(4), tight());
        SplitOptions so;
        so.gamma = g;
        so.lambda = lam;
        auto b = forward_backward({MonotoneOp::subdifferential(h, 4), MonotoneOp::gradient_of(f, 4), std::nullopt},
                                  Vector::Zero(4), so, tight());
        REQUIRE(a.residuals.size() == b.residuals.size());
        for (std::size_t i = 0; i < a.snapshots.size(); ++i) CHECK((a.snapshots[i] - b.snapshots[i]).norm() == 0.0);
        CHECK((a.x - b.x).norm() == 0.0);
    }
    SUBCASE("linear smoother fixed point") {
        const double g = 0.5;
        auto t = pnp_fb({smoother(4), f}, g, RelaxationSchedule::constant(1.0), Vector::Zero(4), tight());
        // x = Q((1-g) x + g o)
        Matrix Q = smoother_matrix(4);
        Vector expect = (Matrix::Identity(4, 4) - (1 - g) * Q).lu().solve(g * Q * o);
        CHECK(t.status == Status::Converged);
        CHECK((t.x - expect).norm() <= 1e-9);
        CHECK(t.warnings.empty());
    }
    SUBCASE("contractive denoiser gives linear residual decay") {
        OperatorRef Q(4, [](const Vector& x) -> Vector { return 0.5 * x + Vector::Ones(4); }, RegularityTag::contraction(0.5),
                      "contraction");
        // x - 0.5 (x - o) halves the gap, then Q halves again: rate 1/4
        auto t = pnp_fb({Q, f}, 0.5, RelaxationSchedule::constant(1.0), vec({9, 9, 9, 9}), tight(200, 1e-13));
        CHECK(t.status == Status::Converged);
        REQUIRE(t.residuals.size() > 5);
        for (std::size_t i = 1; i < t.residuals.size(); ++i)
            if (t.residuals[i - 1] > 1e-12) CHECK(t.residuals[i] <= 0.25 * t.residuals[i - 1] * (1 + 1e-9));
    }
    SUBCASE("expansive denoiser runs with a warning") {
        OperatorRef Q(4, [](const Vector& x) -> Vector { return 1.5 * x; }, RegularityTag::lipschitz(1.5), "gain");
        auto t = pnp_fb({Q, f}, 0.5, RelaxationSchedule::constant(1.0), Vector::Zero(4), tight(50));
        REQUIRE(!t.warnings.empty());
        CHECK(t.warnings.front().code == "no-convergence-claim");
    }
    SUBCASE("step outside the forward band") {
        CHECK_THROWS_AS(pnp_fb({smoother(4), f}, 2.5, RelaxationSchedule::constant(1.0), Vector::Zero(4), tight()),
                        PreconditionError);
    }
}

TEST_CASE("plug-and-play Douglas-Rachford") {
    Vector o = vec({2, 1});
    auto f = FunctionDescriptor::sq_distance_half(o);
    SUBCASE("proximal denoiser matches Douglas-Rachford") {
        auto h = FunctionDescriptor::l1(0.4);
        const double g = 0.8;
        auto lam = RelaxationSchedule::constant(1.3);
        auto a = pnp_dr({prox_op(h, g, 2), f}, g, lam, vec({-1, 5}), tight());
        SplitOptions so;
        so.gamma = g;
        so.lambda = lam;
        auto b = douglas_rachford({MonotoneOp::subdifferential(h, 2), MonotoneOp::subdifferential(f, 2), std::nullopt},
                                  vec({-1, 5}), so, tight());
        REQUIRE(a.residuals.size() == b.residuals.size());
        for (std::size_t i = 0; i < a.residuals.size(); ++i) CHECK(a.residuals[i] == b.residuals[i]);
        CHECK((a.x - b.x).norm() == 0.0);
    }
    SUBCASE("projection onto a line") {
        Vector d = vec({1, 1});
        auto line = SetDescriptor::hyperplane(vec({1, -1}), 0);
        const double g = 1.0;
        auto t = pnp_dr({projection_op(line), f}, g, RelaxationSchedule::constant(1.0), Vector::Zero(2), tight());
        // y = R_Q(a y + b) with R_P y = a y + b
        Matrix RQ = 2.0 * d * d.transpose() / d.squaredNorm() - Matrix::Identity(2, 2);
        double a = (1 - g) / (1 + g);
        Vector b = 2 * g * o / (1 + g);
        Vector y = (Matrix::Identity(2, 2) - a * RQ).lu().solve(RQ * b);
        Vector x = (y + g * o) / (1 + g);
        CHECK((t.x - x).norm() <= 1e-9);
    }
    SUBCASE("relaxation 2 is rejected") {
        CHECK_THROWS_AS(pnp_dr({smoother(2), f}, 1.0, RelaxationSchedule::constant(2.0), Vector::Zero(2), tight()),
                        PreconditionError);
    }
}

TEST_CASE("plug-and-play ADMM") {
    Vector o = vec({1, -1, 2});
    SUBCASE("proximal denoiser matches ADMM") {
        auto f1 = FunctionDescriptor::sq_distance_half(o);
        auto f2 = FunctionDescriptor::l1(0.5);
        const double g = 0.7;
        auto a = pnp_admm({prox_op(f1, g, 3), f2}, g, vec({1, 1, 1}), vec({0, 0, 0}), tight());
        SplitOptions so;
        so.gamma = g;
        auto b = admm(f1, f2, LinMap::identity(3), vec({1, 1, 1}), vec({0, 0, 0}), so, tight());
        REQUIRE(a.trace.residuals.size() == b.residuals.size());
        for (std::size_t i = 0; i < b.residuals.size(); ++i)
            CHECK(a.trace.residuals[i] == doctest::Approx(b.residuals[i]).epsilon(1e-12));
        CHECK((a.trace.x - b.x).norm() <= 1e-12);
        // minimizer of 1/2||x - o||^2 + 0.5||x||_1
        CHECK((a.trace.x - vec({0.5, -0.5, 1.5})).norm() <= 1e-9);
    }
    SUBCASE("identity denoiser is the proximal point method") {
        auto f = FunctionDescriptor::l1(1.0);
        Vector y0 = vec({2, -1, 0.3});
        Vector y = y0;
        for (std::size_t k = 1; k <= 4; ++k) {
            y = soft_threshold(y, 0.5);
            auto r = pnp_admm({identity_op(3), f}, 0.5, y0, vec({0.2, -0.4, 1}), tight(k, 1e-300));
            CHECK((r.y - y).norm() <= 1e-15);
        }
    }
    SUBCASE("seeded smoother fixture converges") {
        Rng rng(20240917);
        Vector oo = rng.normal_vector(6);
        auto r = pnp_admm({smoother(6), FunctionDescriptor::sq_distance_half(oo)}, 1.0, Vector::Zero(6), Vector::Zero(6),
                          tight(100000, 1e-8));
        CHECK(r.trace.status == Status::Converged);
        CHECK(r.trace.final_residual() <= 1e-8);
    }
}

// ---- adjoint mismatch ------------------------------------------------------------------------

TEST_CASE("adjoint mismatch") {
    StopRule s = tight(200000, 1e-14);
    SUBCASE("scalar fixture") {
        MismatchSpec spec{LinMap::from_matrix(mat(1, 1, {2})), LinMap::from_matrix(mat(1, 1, {1.5})), 1.0, vec({2}),
                          FunctionDescriptor::zero()};
        auto r = mismatched_fb(spec, StepSize(), std::nullopt, vec({0}), s);
        // x_hat: 2(2x - 2) + x = 0; x_tilde: 3x + x = 3
        CHECK(r.bias.x_hat(0) == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(r.x_tilde(0) == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(r.x_tilde(0) - r.bias.x_hat(0) == doctest::Approx(-0.05).epsilon(1e-10));
        CHECK(r.bias.predicted_difference(0) == doctest::Approx(-0.05).epsilon(1e-10));
        CHECK(r.bias.exact_relation_applies);
        CHECK(r.bias.residual_term == doctest::Approx(0.2));
        CHECK(r.bias.chi_full == doctest::Approx(1.0 / 13.0));
        CHECK(r.bias.chi_half == doctest::Approx(0.25));
        CHECK(r.bias.difference == doctest::Approx(r.bias.bound_half).epsilon(1e-9));
    }
    SUBCASE("exact adjoint gives no bias") {
        Rng rng(4);
        Matrix H = rng.normal_matrix(4, 3);
        MismatchSpec spec{LinMap::from_matrix(H), LinMap::from_matrix(H.transpose()), 0.5, rng.normal_vector(4),
                          FunctionDescriptor::l1(0.2)};
        auto r = mismatched_fb(spec, StepSize(), std::nullopt, Vector::Zero(3), s);
        CHECK(r.bias.difference <= 1e-10);
        CHECK_FALSE(r.bias.exact_relation_applies);
    }
    SUBCASE("random certified instances satisfy the exact relation") {
        int tested = 0;
        for (std::uint64_t seed = 1; tested < 5 && seed < 50; ++seed) {
            Rng rng(seed);
            Matrix H = rng.normal_matrix(3, 3);
            Matrix K = H.transpose() + 0.2 * rng.normal_matrix(3, 3);
            const double kappa = 0.5;
            Matrix L = K * H + kappa * Matrix::Identity(3, 3);
            if (Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (L + L.transpose())).eigenvalues().minCoeff() <= 0.05)
                continue;
            ++tested;
            Vector y = rng.normal_vector(3);
            MismatchSpec spec{LinMap::from_matrix(H), LinMap::from_matrix(K), kappa, y, FunctionDescriptor::zero()};
            auto r = mismatched_fb(spec, StepSize(), std::nullopt, Vector::Zero(3), tight(2000000, 1e-13));
            Vector xh = (H.transpose() * H + kappa * Matrix::Identity(3, 3)).lu().solve(H.transpose() * y);
            Vector xt = L.lu().solve(K * y);
            CHECK((r.bias.x_hat - xh).norm() <= 1e-9);
            CHECK((r.x_tilde - xt).norm() <= 1e-9);
            CHECK(((r.x_tilde - r.bias.x_hat) - r.bias.predicted_difference).norm() <= 1e-9);
        }
        CHECK(tested == 5);
    }
    SUBCASE("non-cocoercive surrogate is rejected") {
        MismatchSpec spec{LinMap::from_matrix(mat(1, 1, {1})), LinMap::from_matrix(mat(1, 1, {-1})), 0.0, vec({1}),
                          FunctionDescriptor::zero()};
        CHECK_THROWS_AS(mismatched_fb(spec, StepSize(), std::nullopt, vec({0}), s), PreconditionError);
    }
}

// ---- nonlinear observations -------------------------------------------------------------------

TEST_CASE("nonlinear observations") {
    SUBCASE("residuals to convex sets reduce to feasibility") {
        auto C1 = SetDescriptor::ball(vec({0, 0}), 2), C2 = SetDescriptor::halfspace(vec({1, 1}), -1);
        ObservationSpec spec;
        spec.dim = 2;
        for (const auto& C : {C1, C2})
            spec.obs.push_back({[C](const Vector& x) -> Vector { return x - project(C, x); }, {}, vec({0, 0}), "d"});
        auto t = nonlinear_observation_solve(spec, vec({4, 4}), tight());
        CHECK(t.status == Status::Converged);
        CHECK(distance(C1, t.x) <= 1e-8);
        CHECK(distance(C2, t.x) <= 1e-8);
        FeasibilitySpec fs;
        fs.sets = {C1, C2};
        CHECK((pocs(fs, vec({4, 4}), PocsMode::Sequential, tight()).trace.x - t.x).norm() <= 1e-9);
    }
    SUBCASE("soft-threshold observation of a planted signal") {
        Vector planted = vec({2, -0.5, 3, 0.2});
        Vector r = vec({1, 0, 2, 0});  // soft threshold at 1 applied by hand
        ObservationSpec spec;
        spec.dim = 4;
        spec.obs.push_back({[](const Vector& x) -> Vector { return soft_threshold(x, 1.0); }, {}, r, "soft"});
        auto t = nonlinear_observation_solve(spec, Vector::Zero(4), tight());
        CHECK(t.status == Status::Converged);
        CHECK((soft_threshold(t.x, 1.0) - r).norm() <= 1e-8);
        CHECK(std::stod(t.metadata.at("observation_residual")) <= 1e-8);
        (void)planted;
    }
    SUBCASE("identity observation") {
        ObservationSpec spec;
        spec.dim = 3;
        Vector c = vec({1, 2, 3});
        spec.obs.push_back({[](const Vector& x) { return x; }, {}, c, "id"});
        auto t = nonlinear_observation_solve(spec, vec({-5, 0, 9}), tight());
        CHECK((t.x - c).norm() <= 1e-12);
    }
    SUBCASE("failed proxifiability check") {
        ObservationSpec spec;
        spec.dim = 2;
        spec.obs.push_back({[](const Vector& x) -> Vector { return 2.0 * x; }, {}, vec({0, 0}), "gain"});
        CHECK_THROWS_AS(nonlinear_observation_solve(spec, vec({1, 1}), tight()), PreconditionError);
    }
}
