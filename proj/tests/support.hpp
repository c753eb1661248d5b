#pragma once

#include <cmath>
#include <initializer_list>

#include <Eigen/Dense>

namespace oracle {

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) x(i++) = e;
    return x;
}

struct LassoSolution {
    Eigen::VectorXd x;
    double objective;
};

// Plain proximal-gradient loop on 1/2||Hx-o||^2 + alpha||x||_1, written without the library.
inline LassoSolution lasso_by_prox_gradient(const Eigen::MatrixXd& H, const Eigen::VectorXd& o, double alpha,
                                            long steps = 10000000) {
    Eigen::MatrixXd G = H.transpose() * H;
    Eigen::VectorXd c = H.transpose() * o;
    double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G).eigenvalues().maxCoeff();
    double tau = 1.0 / L;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(H.cols());
    for (long n = 0; n < steps; ++n) {
        Eigen::VectorXd u = x - tau * (G * x - c);
        for (Eigen::Index j = 0; j < u.size(); ++j) {
            double a = std::abs(u(j)) - tau * alpha;
            x(j) = a > 0 ? std::copysign(a, u(j)) : 0.0;
        }
    }
    return {x, 0.5 * (H * x - o).squaredNorm() + alpha * x.lpNorm<1>()};
}

}  // namespace oracle
