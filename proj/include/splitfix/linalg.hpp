#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace splitfix {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Throws DimensionError / std::invalid_argument on NaN or Inf entries.
void require_finite(const Vector& x, const char* what);
void require_finite(const Matrix& m, const char* what);

class LinMap {
public:
    using Fn = std::function<Vector(const Vector&)>;

    LinMap() = default;
    LinMap(Index in_dim, Index out_dim, Fn forward, Fn adjoint);

    static LinMap from_matrix(const Matrix& m);
    static LinMap identity(Index n);
    static LinMap scaled_identity(Index n, double s);
    static LinMap zero(Index in_dim, Index out_dim);

    Vector apply(const Vector& x) const;
    Vector apply_adjoint(const Vector& y) const;

    Index in_dim() const { return in_dim_; }
    Index out_dim() const { return out_dim_; }

    // Dense representation, built column by column from forward evaluations.
    Matrix to_matrix() const;

    // L* as a LinMap.
    LinMap adjoint() const;

private:
    Index in_dim_ = 0;
    Index out_dim_ = 0;
    Fn fwd_;
    Fn adj_;
};

LinMap compose(const LinMap& outer, const LinMap& inner);

struct NormEstimate {
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

// Power iteration on L*L; returns sqrt of the top eigenvalue estimate.
NormEstimate operator_norm_estimate(const LinMap& L, double tol = 1e-9, std::size_t max_iter = 500,
                                    std::uint64_t seed = 0x5eed);
double operator_norm(const LinMap& L, double tol = 1e-9, std::size_t max_iter = 500);

// Upper bound used when a norm sets a step size: estimate inflated by 1%.
double operator_norm_bound(const LinMap& L);

double adjoint_check(const LinMap& L, std::size_t samples, std::uint64_t seed);

struct SymEig {
    Vector values;   // ascending
    Matrix vectors;  // columns
};

// Cyclic Jacobi. Input must be symmetric to 1e-10 (relative to its scale).
SymEig sym_eig(const Matrix& m);

struct Svd {
    Matrix U;
    Vector singular_values;  // descending, length min(rows, cols)
    Matrix V;
};

// One-sided Jacobi; thin factors U (rows x k), V (cols x k), k = min(rows, cols).
Svd svd(const Matrix& m);

// Largest singular value via svd; exact to roundoff, used where inequalities are checked tightly.
double spectral_norm(const Matrix& m);

class BlockVector {
public:
    BlockVector() = default;
    explicit BlockVector(std::vector<Index> dims);
    explicit BlockVector(std::vector<Vector> blocks);

    std::size_t size() const { return blocks_.size(); }
    Index total_dim() const;
    const std::vector<Index>& dims() const { return dims_; }

    Vector& operator[](std::size_t i) { return blocks_[i]; }
    const Vector& operator[](std::size_t i) const { return blocks_[i]; }
    const std::vector<Vector>& blocks() const { return blocks_; }

    Vector flatten() const;
    static BlockVector unflatten(const Vector& flat, const std::vector<Index>& dims);

    double dot(const BlockVector& other) const;
    double squared_norm() const;
    double norm() const;

    BlockVector& operator+=(const BlockVector& o);
    BlockVector& operator-=(const BlockVector& o);
    BlockVector& operator*=(double s);

private:
    void check_same_shape(const BlockVector& o) const;

    std::vector<Index> dims_;
    std::vector<Vector> blocks_;
};

BlockVector operator+(BlockVector a, const BlockVector& b);
BlockVector operator-(BlockVector a, const BlockVector& b);
BlockVector operator*(double s, BlockVector a);

// Row-major flatten/unflatten used for matrix-valued iterates.
Vector flatten_rowmajor(const Matrix& m);
Matrix unflatten_rowmajor(const Vector& v, Index rows, Index cols);

}  // namespace splitfix
