#pragma once

#include <array>
#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "ofmpc/error.hpp"
#include "ofmpc/lmi/tolerances.hpp"

namespace ofmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace lmi {

inline bool all_finite(const Matrix& m)
{
    return m.allFinite();
}

inline Matrix symmetrize(const Matrix& m)
{
    return 0.5 * (m + m.transpose());
}

/// Dense symmetric block. Construction symmetrizes and rejects non-finite data.
class SymBlock {
public:
    SymBlock() = default;

    explicit SymBlock(const Matrix& m, double tol_sym = default_tolerances.sym)
    {
        if (m.rows() != m.cols())
            throw Error(ErrorCode::dimension_mismatch, "SymBlock requires a square matrix");
        if (!all_finite(m))
            throw Error(ErrorCode::invalid_input, "SymBlock has non-finite entries");
        const double scale = 1.0 + m.cwiseAbs().maxCoeff();
        if (m.size() > 0 && (m - m.transpose()).cwiseAbs().maxCoeff() > tol_sym * scale * 1e6)
            throw Error(ErrorCode::invalid_input, "SymBlock input is far from symmetric");
        data_ = symmetrize(m);
    }

    static SymBlock identity(Eigen::Index n) { return SymBlock(Matrix::Identity(n, n)); }
    static SymBlock zero(Eigen::Index n) { return SymBlock(Matrix::Zero(n, n)); }

    [[nodiscard]] Eigen::Index dim() const { return data_.rows(); }
    [[nodiscard]] const Matrix& matrix() const { return data_; }

private:
    Matrix data_;
};

inline Vector eigenvalues(const Matrix& m)
{
    if (m.size() == 0)
        return Vector();
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

inline double min_eig(const Matrix& m)
{
    if (m.size() == 0)
        return 0.0;
    return eigenvalues(m).minCoeff();
}

/// Largest eigenvalue of a symmetric matrix.
inline double max_eig(const SymBlock& m)
{
    if (m.dim() == 0)
        return 0.0;
    return eigenvalues(m.matrix()).maxCoeff();
}

inline double max_eig(const Matrix& m)
{
    if (!all_finite(m))
        throw Error(ErrorCode::invalid_input, "max_eig: non-finite entries");
    return max_eig(SymBlock(m));
}

inline bool is_psd(const SymBlock& m, double tol)
{
    if (tol < 0)
        throw Error(ErrorCode::invalid_input, "is_psd: negative tolerance");
    return m.dim() == 0 || min_eig(m.matrix()) >= -tol;
}

inline bool is_psd(const Matrix& m, double tol)
{
    return is_psd(SymBlock(m), tol);
}

enum class SchurPivot { none, lower_right, upper_left };

/// PSD test of [[x, y], [y^T, z]].
///
/// With `pivot == none` the assembled block is tested directly. The pivot forms
/// use the Schur complement of z (resp. x); the pivot must be positive definite
/// or degenerate-pivot is raised.
inline bool schur_psd(const SymBlock& x, const Matrix& y, const SymBlock& z, double tol,
                      SchurPivot pivot = SchurPivot::none)
{
    if (y.rows() != x.dim() || y.cols() != z.dim())
        throw Error(ErrorCode::dimension_mismatch, "schur_psd: off-diagonal block not conformal");
    if (!all_finite(y))
        throw Error(ErrorCode::invalid_input, "schur_psd: non-finite entries");

    switch (pivot) {
    case SchurPivot::none: {
        const Eigen::Index n = x.dim() + z.dim();
        Matrix full(n, n);
        full << x.matrix(), y, y.transpose(), z.matrix();
        return is_psd(SymBlock(full), tol);
    }
    case SchurPivot::lower_right: {
        Eigen::LLT<Matrix> llt(z.matrix());
        if (llt.info() != Eigen::Success || min_eig(z.matrix()) <= 0)
            throw Error(ErrorCode::degenerate_pivot, "schur_psd: z is not positive definite");
        return is_psd(SymBlock(x.matrix() - y * llt.solve(y.transpose())), tol);
    }
    case SchurPivot::upper_left: {
        Eigen::LLT<Matrix> llt(x.matrix());
        if (llt.info() != Eigen::Success || min_eig(x.matrix()) <= 0)
            throw Error(ErrorCode::degenerate_pivot, "schur_psd: x is not positive definite");
        return is_psd(SymBlock(z.matrix() - y.transpose() * llt.solve(y)), tol);
    }
    }
    return false;
}

struct CholeskyFactor {
    Matrix factor;  // upper triangular R with R^T R = m + jitter I
    double jitter = 0.0;
};

/// Factor R with R^T R ~= m for a positive semidefinite m.
///
/// Tries a plain Cholesky, then the jitter ladder {1e-12, 1e-10, 1e-8}. A matrix
/// that is PSD within tol_chol but still defeats the ladder is factored from its
/// clipped eigen-decomposition (the factor is then square but not triangular).
inline CholeskyFactor cholesky_psd(const SymBlock& m, double tol_chol = default_tolerances.chol)
{
    const Eigen::Index n = m.dim();
    if (n == 0)
        return {Matrix(0, 0), 0.0};
    const double lmin = min_eig(m.matrix());
    if (lmin < -tol_chol * (1.0 + m.matrix().norm()))
        throw Error(ErrorCode::not_psd, "cholesky_psd: matrix is indefinite (min eig " +
                                            std::to_string(lmin) + ")");

    constexpr std::array<double, 4> ladder{0.0, 1e-12, 1e-10, 1e-8};
    for (double jitter : ladder) {
        Matrix shifted = m.matrix() + jitter * Matrix::Identity(n, n);
        Eigen::LLT<Matrix> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Matrix r = llt.matrixU();
            if (r.allFinite())
                return {r, jitter};
        }
    }

    Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
    const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return {root.asDiagonal() * es.eigenvectors().transpose(), 0.0};
}

} // namespace lmi
} // namespace ofmpc
