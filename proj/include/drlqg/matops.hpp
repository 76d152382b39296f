#pragma once

// Symmetric / positive-semidefinite matrix primitives used by every numeric
// module. All symmetric outputs are explicitly re-symmetrized.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "drlqg/errors.hpp"

namespace drlqg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Eigenvalues below this (in absolute terms) are treated as rounding noise
/// and clamped to zero before matrix square roots.
inline constexpr double kPsdClamp = 1e-10;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Trace inner product <A, B> = Tr(A^T B).
inline double frob_inner(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

/// Dense real symmetric matrix. Construction validates and symmetrizes.
class SymMatrix {
public:
    SymMatrix() = default;

    explicit SymMatrix(const Matrix& m) {
        require(m.rows() == m.cols(), ErrorCode::InvalidInput,
                "SymMatrix: matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        require(all_finite(m), ErrorCode::InvalidInput, "SymMatrix: non-finite entries");
        m_ = symmetrize(m);
    }

    static SymMatrix identity(Index n) { return SymMatrix(Matrix::Identity(n, n)); }
    static SymMatrix zero(Index n) { return SymMatrix(Matrix::Zero(n, n)); }
    static SymMatrix diagonal(const Vector& d) { return SymMatrix(Matrix(d.asDiagonal())); }

    Index dim() const { return m_.rows(); }
    const Matrix& matrix() const { return m_; }
    operator const Matrix&() const { return m_; }  // NOLINT: deliberate implicit view

    double operator()(Index i, Index j) const { return m_(i, j); }

private:
    Matrix m_;
};

struct SpdCertificate {
    double min_eigenvalue = 0.0;
    bool is_psd = false;
    bool is_pd = false;
};

/// Eigen-decomposition S = U diag(values) U^T of a symmetric matrix.
struct SymEigen {
    Vector values;   // ascending
    Matrix vectors;  // columns are eigenvectors
};

inline SymEigen sym_eig(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s));
    require(es.info() == Eigen::Success, ErrorCode::Numeric, "symmetric eigensolver failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

inline double min_eigenvalue(const Matrix& s) {
    if (s.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s), Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, ErrorCode::Numeric, "symmetric eigensolver failed");
    return es.eigenvalues()(0);
}

inline double max_eigenvalue(const Matrix& s) {
    if (s.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s), Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, ErrorCode::Numeric, "symmetric eigensolver failed");
    return es.eigenvalues()(es.eigenvalues().size() - 1);
}

/// U diag(f(lambda)) U^T
template <typename F>
Matrix spectral_apply(const SymEigen& e, F&& f) {
    Vector mapped = e.values.unaryExpr(std::forward<F>(f));
    return symmetrize(e.vectors * mapped.asDiagonal() * e.vectors.transpose());
}

inline void check_square_finite(const Matrix& s, const char* who) {
    require(s.rows() == s.cols(), ErrorCode::InvalidInput, std::string(who) + ": non-square input");
    require(all_finite(s), ErrorCode::InvalidInput, std::string(who) + ": non-finite input");
}

/// Principal square root of a PSD matrix. Eigenvalues in [-1e-10, 0) are
/// clamped to zero, anything more negative is rejected.
inline SymMatrix sym_sqrt(const Matrix& s) {
    check_square_finite(s, "sym_sqrt");
    if (s.size() == 0) return SymMatrix(s);
    SymEigen e = sym_eig(s);
    require(e.values(0) >= -kPsdClamp, ErrorCode::InvalidInput,
            "sym_sqrt: matrix is indefinite (min eigenvalue " + std::to_string(e.values(0)) + ")");
    return SymMatrix(spectral_apply(e, [](double l) { return std::sqrt(std::max(l, 0.0)); }));
}

/// Inverse square root of a PD matrix.
inline SymMatrix sym_inv_sqrt(const Matrix& s) {
    check_square_finite(s, "sym_inv_sqrt");
    SymEigen e = sym_eig(s);
    require(e.values(0) > 0.0, ErrorCode::InvalidInput, "sym_inv_sqrt: matrix is not positive definite");
    return SymMatrix(spectral_apply(e, [](double l) { return 1.0 / std::sqrt(l); }));
}

/// Certificate on A - B in the Loewner order.
inline SpdCertificate loewner_geq(const Matrix& a, const Matrix& b, double tol) {
    require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() == a.cols(), ErrorCode::InvalidInput,
            "loewner_geq: dimension mismatch");
    SpdCertificate cert;
    cert.min_eigenvalue = min_eigenvalue(a - b);
    cert.is_psd = cert.min_eigenvalue >= -tol;
    cert.is_pd = cert.min_eigenvalue >= tol;
    return cert;
}

inline double spectral_radius(const Matrix& f) {
    check_square_finite(f, "spectral_radius");
    if (f.size() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(f, false);
    require(es.info() == Eigen::Success, ErrorCode::Numeric, "spectral_radius: eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline constexpr double kSchurMargin = 1e-8;

/// Solves Sigma = F Sigma F^T + Q for Schur-stable F.
///
/// Small problems (dim <= 50) use the vectorized Kronecker system
/// (I - F (x) F) vec(Sigma) = vec(Q); larger ones use the doubling iteration
/// Sigma_{k+1} = Sigma_k + F_k Sigma_k F_k^T, F_{k+1} = F_k^2.
inline SymMatrix solve_discrete_lyapunov(const Matrix& f, const Matrix& q) {
    check_square_finite(f, "solve_discrete_lyapunov");
    check_square_finite(q, "solve_discrete_lyapunov");
    require(f.rows() == q.rows(), ErrorCode::InvalidInput, "solve_discrete_lyapunov: dimension mismatch");
    const double rho = spectral_radius(f);
    require(rho < 1.0 - kSchurMargin, ErrorCode::Instability,
            "solve_discrete_lyapunov: spectral radius " + std::to_string(rho) + " is not below 1");
    const Index n = f.rows();
    const Matrix qs = symmetrize(q);
    Matrix sigma;
    if (n <= 50) {
        const Index nn = n * n;
        Matrix lhs = Matrix::Identity(nn, nn);
        // vec(F X F^T) = (F (x) F) vec(X), column-major vec.
        for (Index j = 0; j < n; ++j)
            for (Index i = 0; i < n; ++i)
                lhs.block(i * n, j * n, n, n) -= f(i, j) * f;
        Vector rhs = Eigen::Map<const Vector>(qs.data(), nn);
        Vector x = lhs.partialPivLu().solve(rhs);
        sigma = Eigen::Map<Matrix>(x.data(), n, n);
    } else {
        sigma = qs;
        Matrix fk = f;
        for (int it = 0; it < 200; ++it) {
            Matrix inc = fk * sigma * fk.transpose();
            sigma += inc;
            fk = fk * fk;
            if (inc.norm() <= 1e-17 * (1.0 + sigma.norm()) || fk.norm() < 1e-300) break;
        }
    }
    return SymMatrix(sigma);
}

inline Matrix spd_inverse(const Matrix& s, const char* who) {
    Eigen::LLT<Matrix> llt(symmetrize(s));
    require(llt.info() == Eigen::Success, ErrorCode::Conditioning, std::string(who) + ": matrix is not positive definite");
    return symmetrize(llt.solve(Matrix::Identity(s.rows(), s.cols())));
}

inline double spd_logdet(const Matrix& s, const char* who) {
    Eigen::LLT<Matrix> llt(symmetrize(s));
    require(llt.info() == Eigen::Success, ErrorCode::InvalidInput, std::string(who) + ": matrix is not positive definite");
    const Matrix& l = llt.matrixLLT();
    double acc = 0.0;
    for (Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
    return 2.0 * acc;
}

inline Matrix block_diag(const std::vector<Matrix>& blocks) {
    Index rows = 0, cols = 0;
    for (const auto& b : blocks) {
        rows += b.rows();
        cols += b.cols();
    }
    Matrix out = Matrix::Zero(rows, cols);
    Index r = 0, c = 0;
    for (const auto& b : blocks) {
        out.block(r, c, b.rows(), b.cols()) = b;
        r += b.rows();
        c += b.cols();
    }
    return out;
}

}  // namespace drlqg
