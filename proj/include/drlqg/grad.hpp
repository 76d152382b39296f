#pragma once

// Gradient of the LQG value with respect to every noise covariance block,
// by an explicit reverse sweep through the Kalman covariance recursion.

#include <string>
#include <vector>

#include "drlqg/lqg_finite.hpp"

namespace drlqg {

/// Symmetric G per block with df = Tr(G dSigma) for symmetric dSigma.
struct GradientProfile {
    Matrix dX0;
    std::vector<Matrix> dW;
    std::vector<Matrix> dV;

    int horizon() const { return static_cast<int>(dW.size()); }
    int blocks() const { return 1 + static_cast<int>(dW.size() + dV.size()); }

    Matrix& block(int z) {
        const int T = horizon();
        if (z == 0) return dX0;
        if (z <= T) return dW[z - 1];
        return dV[z - 1 - T];
    }
    const Matrix& block(int z) const { return const_cast<GradientProfile*>(this)->block(z); }

    /// Sum over blocks of <G_z, D_z>.
    double pair(const CovarianceProfile& d) const {
        double acc = 0.0;
        for (int z = 0; z < blocks(); ++z) acc += frob_inner(block(z), d.block(z));
        return acc;
    }
};

struct ValueAndGradient {
    double value = 0.0;
    GradientProfile grad;
    LqgSolution solution;
};

/// Adjoint sweep. With Pi_t = Sigma_{t|t-1}, the cost is
///   sum_t <Q_t - P_t, Sigma_t> + sum_t <P_t, Pi_t>,
/// Sigma_t = Pi_t - Pi_t C' (C Pi_t C' + V_t)^-1 C Pi_t, Pi_{t+1} = A Sigma_t A' + W_t.
/// Sbar is the adjoint of Pi; the Kalman update pulls back through
/// (I - KC)' Sbar_Sigma (I - KC) for Pi and K' Sbar_Sigma K for V.
inline ValueAndGradient lqg_gradient(const SystemInstance& sys, const CovarianceProfile& cov) {
    ValueAndGradient out;
    out.solution = lqg_value(sys, cov);
    out.value = out.solution.cost;
    const LqgSolution& sol = out.solution;
    const int T = sys.T;
    const Index n = sys.n();
    GradientProfile& g = out.grad;
    g.dW.resize(T);
    g.dV.resize(T);
    Matrix sbar = sol.P[T];
    for (int t = T - 1; t >= 0; --t) {
        const Matrix& A = sys.A[t];
        const Matrix& C = sys.C[t];
        const Matrix& Pi = sol.Sigma_pred[t];
        g.dW[t] = sbar;
        const Matrix sigma_bar = symmetrize(sys.Q[t] - sol.P[t] + A.transpose() * sbar * A);
        Eigen::LLT<Matrix> mllt(symmetrize(C * Pi * C.transpose() + cov.V[t]));
        require(mllt.info() == Eigen::Success, ErrorCode::Conditioning,
                "lqg_gradient: innovation covariance is singular at t=" + std::to_string(t));
        const Matrix gain = mllt.solve(C * Pi).transpose();  // Pi C' M^-1
        const Matrix ikc = Matrix::Identity(n, n) - gain * C;
        g.dV[t] = symmetrize(gain.transpose() * sigma_bar * gain);
        sbar = symmetrize(sol.P[t] + ikc.transpose() * sigma_bar * ikc);
    }
    g.dX0 = sbar;
    return out;
}

/// Central differences along the symmetric basis
/// (e_i e_j' + e_j e_i') / (1 + [i = j]); off-diagonal results are halved to
/// match the trace-pairing convention.
inline GradientProfile fd_gradient(const SystemInstance& sys, const CovarianceProfile& cov, double step = 1e-5) {
    require(step > 0.0, ErrorCode::InvalidInput, "fd_gradient: step must be positive");
    cov.validate(sys);
    const int T = sys.T;
    GradientProfile g;
    g.dW.resize(T);
    g.dV.resize(T);
    for (int z = 0; z < cov.blocks(); ++z) {
        const Matrix& base = cov.block(z);
        const Index d = base.rows();
        const double h = step * (1.0 + base.norm());
        const bool is_v = z > T;
        Matrix out = Matrix::Zero(d, d);
        for (Index i = 0; i < d; ++i) {
            for (Index j = i; j < d; ++j) {
                Matrix e = Matrix::Zero(d, d);
                e(i, j) = 1.0;
                e(j, i) = 1.0;
                CovarianceProfile plus = cov, minus = cov;
                plus.block(z) = base + h * e;
                minus.block(z) = base - h * e;
                if (is_v) {
                    require(min_eigenvalue(minus.block(z)) > kCholeskyPivot &&
                                min_eigenvalue(plus.block(z)) > kCholeskyPivot,
                            ErrorCode::StepTooLarge,
                            "fd_gradient: perturbation leaves the positive definite cone for V at t=" +
                                std::to_string(z - 1 - T));
                }
                const double dfd = (lqg_value(sys, plus).cost - lqg_value(sys, minus).cost) / (2.0 * h);
                if (i == j) {
                    out(i, i) = dfd;
                } else {
                    out(i, j) = 0.5 * dfd;
                    out(j, i) = 0.5 * dfd;
                }
            }
        }
        g.block(z) = out;
    }
    return g;
}

}  // namespace drlqg
