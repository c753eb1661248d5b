#include "splitfix/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "splitfix/errors.hpp"
#include "splitfix/rng.hpp"

namespace splitfix {

void require_finite(const Vector& x, const char* what) {
    if (!x.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

LinMap::LinMap(Index in_dim, Index out_dim, Fn forward, Fn adjoint)
    : in_dim_(in_dim), out_dim_(out_dim), fwd_(std::move(forward)), adj_(std::move(adjoint)) {
    if (in_dim < 1 || out_dim < 1) throw DimensionError("LinMap: dimensions must be positive");
    if (!fwd_ || !adj_) throw std::invalid_argument("LinMap: forward and adjoint required");
}

LinMap LinMap::from_matrix(const Matrix& m) {
    require_finite(m, "LinMap::from_matrix");
    return LinMap(m.cols(), m.rows(), [m](const Vector& x) -> Vector { return m * x; },
                  [m](const Vector& y) -> Vector { return m.transpose() * y; });
}

LinMap LinMap::identity(Index n) {
    return LinMap(n, n, [](const Vector& x) { return x; }, [](const Vector& y) { return y; });
}

LinMap LinMap::scaled_identity(Index n, double s) {
    return LinMap(n, n, [s](const Vector& x) -> Vector { return s * x; },
                  [s](const Vector& y) -> Vector { return s * y; });
}

LinMap LinMap::zero(Index in_dim, Index out_dim) {
    return LinMap(in_dim, out_dim, [out_dim](const Vector&) -> Vector { return Vector::Zero(out_dim); },
                  [in_dim](const Vector&) -> Vector { return Vector::Zero(in_dim); });
}

Vector LinMap::apply(const Vector& x) const {
    if (x.size() != in_dim_)
        throw DimensionError("LinMap::apply: expected " + std::to_string(in_dim_) + " got " +
                             std::to_string(x.size()));
    Vector y = fwd_(x);
    if (y.size() != out_dim_) throw DimensionError("LinMap::apply: forward returned wrong size");
    return y;
}

Vector LinMap::apply_adjoint(const Vector& y) const {
    if (y.size() != out_dim_)
        throw DimensionError("LinMap::apply_adjoint: expected " + std::to_string(out_dim_) + " got " +
                             std::to_string(y.size()));
    Vector x = adj_(y);
    if (x.size() != in_dim_) throw DimensionError("LinMap::apply_adjoint: adjoint returned wrong size");
    return x;
}

Matrix LinMap::to_matrix() const {
    Matrix m(out_dim_, in_dim_);
    for (Index j = 0; j < in_dim_; ++j) m.col(j) = apply(Vector::Unit(in_dim_, j));
    return m;
}

LinMap LinMap::adjoint() const { return LinMap(out_dim_, in_dim_, adj_, fwd_); }

LinMap compose(const LinMap& outer, const LinMap& inner) {
    if (outer.in_dim() != inner.out_dim()) throw DimensionError("compose(LinMap): dimension mismatch");
    return LinMap(
        inner.in_dim(), outer.out_dim(), [outer, inner](const Vector& x) { return outer.apply(inner.apply(x)); },
        [outer, inner](const Vector& y) { return inner.apply_adjoint(outer.apply_adjoint(y)); });
}

NormEstimate operator_norm_estimate(const LinMap& L, double tol, std::size_t max_iter, std::uint64_t seed) {
    if (tol <= 0) throw std::invalid_argument("operator_norm: tol must be positive");
    // A forward/adjoint pair that disagrees on sizes fails here.
    {
        Vector probe = Vector::Zero(L.in_dim());
        Vector back = L.apply_adjoint(L.apply(probe));
        if (back.size() != L.in_dim()) throw DimensionError("operator_norm: adjoint size mismatch");
    }
    Rng rng(seed);
    Vector x = rng.normal_vector(L.in_dim());
    x /= x.norm();
    NormEstimate est;
    double prev = 0.0;
    for (std::size_t k = 1; k <= max_iter; ++k) {
        // Rayleigh quotient ||Lx||^2 of L*L at the unit vector x.
        Vector lx = L.apply(x);
        double lam = lx.squaredNorm();
        Vector y = L.apply_adjoint(lx);
        double ny = y.norm();
        est.iterations = k;
        if (ny == 0.0) {
            if (k == 1) {
                // Start vector in the kernel: try once more from a fresh draw.
                x = rng.normal_vector(L.in_dim());
                x /= x.norm();
                lx = L.apply(x);
                lam = lx.squaredNorm();
                y = L.apply_adjoint(lx);
                ny = y.norm();
            }
            if (ny == 0.0) {
                est.value = 0.0;
                est.converged = true;
                return est;
            }
        }
        x = y / ny;
        if (k > 1 && std::abs(lam - prev) <= tol * lam) {
            prev = lam;
            est.converged = true;
            break;
        }
        prev = lam;
    }
    est.value = std::sqrt(prev);
    return est;
}

double operator_norm(const LinMap& L, double tol, std::size_t max_iter) {
    return operator_norm_estimate(L, tol, max_iter).value;
}

double operator_norm_bound(const LinMap& L) { return 1.01 * operator_norm(L); }

double adjoint_check(const LinMap& L, std::size_t samples, std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("adjoint_check: samples must be >= 1");
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        Vector x = rng.normal_vector(L.in_dim());
        Vector y = rng.normal_vector(L.out_dim());
        double lhs = L.apply(x).dot(y);
        double rhs = x.dot(L.apply_adjoint(y));
        worst = std::max(worst, std::abs(lhs - rhs) / (1.0 + x.norm() * y.norm()));
    }
    return worst;
}

SymEig sym_eig(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("sym_eig: matrix not square");
    require_finite(m, "sym_eig");
    const Index n = m.rows();
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::invalid_argument("sym_eig: matrix not symmetric");

    Matrix a = 0.5 * (m + m.transpose());
    Matrix v = Matrix::Identity(n, n);
    const double fro = a.norm();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Index p = 0; p < n; ++p)
            for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(2.0 * off) <= 1e-16 * fro || off == 0.0) break;
        for (Index p = 0; p < n - 1; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (apq == 0.0) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (Index k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Index k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Index k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return a(i, i) < a(j, j); });
    SymEig out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Index k = 0; k < n; ++k) {
        out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
        out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
    }
    return out;
}

namespace {

// Fill columns flagged as empty with unit vectors orthogonal to the rest.
void complete_orthonormal(Matrix& q, const std::vector<bool>& empty) {
    const Index rows = q.rows();
    Index probe = 0;
    for (Index j = 0; j < q.cols(); ++j) {
        if (!empty[static_cast<std::size_t>(j)]) continue;
        while (probe < rows) {
            Vector c = Vector::Unit(rows, probe++);
            for (int pass = 0; pass < 2; ++pass)
                for (Index k = 0; k < q.cols(); ++k)
                    if (k != j && (!empty[static_cast<std::size_t>(k)] || k < j)) c -= q.col(k).dot(c) * q.col(k);
            double nc = c.norm();
            if (nc > 1e-8) {
                q.col(j) = c / nc;
                break;
            }
        }
    }
}

Svd svd_tall(const Matrix& m) {
    const Index rows = m.rows(), cols = m.cols();
    Matrix u = m;
    Matrix v = Matrix::Identity(cols, cols);
    for (int sweep = 0; sweep < 80; ++sweep) {
        bool rotated = false;
        for (Index p = 0; p < cols - 1; ++p) {
            for (Index q = p + 1; q < cols; ++q) {
                double alpha = u.col(p).squaredNorm();
                double beta = u.col(q).squaredNorm();
                double gamma = u.col(p).dot(u.col(q));
                if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                rotated = true;
                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (Index k = 0; k < rows; ++k) {
                    double up = u(k, p), uq = u(k, q);
                    u(k, p) = c * up - s * uq;
                    u(k, q) = s * up + c * uq;
                }
                for (Index k = 0; k < cols; ++k) {
                    double vp = v(k, p), vq = v(k, q);
                    v(k, p) = c * vp - s * vq;
                    v(k, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    Vector sigma(cols);
    for (Index j = 0; j < cols; ++j) sigma(j) = u.col(j).norm();
    std::vector<Index> order(static_cast<std::size_t>(cols));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return sigma(i) > sigma(j); });

    Svd out;
    out.singular_values.resize(cols);
    out.U.resize(rows, cols);
    out.V.resize(cols, cols);
    const double smax = sigma.size() > 0 ? sigma.maxCoeff() : 0.0;
    std::vector<bool> empty(static_cast<std::size_t>(cols), false);
    for (Index k = 0; k < cols; ++k) {
        Index j = order[static_cast<std::size_t>(k)];
        out.singular_values(k) = sigma(j);
        out.V.col(k) = v.col(j);
        if (sigma(j) > 1e-300 && sigma(j) > 1e-14 * smax) {
            out.U.col(k) = u.col(j) / sigma(j);
        } else {
            out.U.col(k).setZero();
            empty[static_cast<std::size_t>(k)] = true;
        }
    }
    complete_orthonormal(out.U, empty);
    return out;
}

}  // namespace

Svd svd(const Matrix& m) {
    require_finite(m, "svd");
    if (m.rows() == 0 || m.cols() == 0) return {};
    if (m.rows() >= m.cols()) return svd_tall(m);
    Svd t = svd_tall(m.transpose());
    return Svd{t.V, t.singular_values, t.U};
}

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return svd(m).singular_values(0);
}

BlockVector::BlockVector(std::vector<Index> dims) : dims_(std::move(dims)) {
    blocks_.reserve(dims_.size());
    for (Index d : dims_) blocks_.push_back(Vector::Zero(d));
}

BlockVector::BlockVector(std::vector<Vector> blocks) : blocks_(std::move(blocks)) {
    for (const auto& b : blocks_) dims_.push_back(b.size());
}

Index BlockVector::total_dim() const { return std::accumulate(dims_.begin(), dims_.end(), Index{0}); }

Vector BlockVector::flatten() const {
    Vector out(total_dim());
    Index off = 0;
    for (const auto& b : blocks_) {
        out.segment(off, b.size()) = b;
        off += b.size();
    }
    return out;
}

BlockVector BlockVector::unflatten(const Vector& flat, const std::vector<Index>& dims) {
    BlockVector out(dims);
    if (flat.size() != out.total_dim()) throw DimensionError("BlockVector::unflatten: size mismatch");
    Index off = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out.blocks_[i] = flat.segment(off, dims[i]);
        off += dims[i];
    }
    return out;
}

void BlockVector::check_same_shape(const BlockVector& o) const {
    if (dims_ != o.dims_) throw DimensionError("BlockVector: shape mismatch");
}

double BlockVector::dot(const BlockVector& other) const {
    check_same_shape(other);
    double s = 0.0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) s += blocks_[i].dot(other.blocks_[i]);
    return s;
}

double BlockVector::squared_norm() const {
    double s = 0.0;
    for (const auto& b : blocks_) s += b.squaredNorm();
    return s;
}

double BlockVector::norm() const { return std::sqrt(squared_norm()); }

BlockVector& BlockVector::operator+=(const BlockVector& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i] += o.blocks_[i];
    return *this;
}

BlockVector& BlockVector::operator-=(const BlockVector& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i] -= o.blocks_[i];
    return *this;
}

BlockVector& BlockVector::operator*=(double s) {
    for (auto& b : blocks_) b *= s;
    return *this;
}

BlockVector operator+(BlockVector a, const BlockVector& b) { return a += b; }
BlockVector operator-(BlockVector a, const BlockVector& b) { return a -= b; }
BlockVector operator*(double s, BlockVector a) { return a *= s; }

Vector flatten_rowmajor(const Matrix& m) {
    Vector v(m.size());
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) v(i * m.cols() + j) = m(i, j);
    return v;
}

Matrix unflatten_rowmajor(const Vector& v, Index rows, Index cols) {
    if (v.size() != rows * cols) throw DimensionError("unflatten_rowmajor: size mismatch");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = v(i * cols + j);
    return m;
}

}  // namespace splitfix
