#pragma once

// Finite-horizon LQG: Riccati backward sweep, Kalman covariance forward sweep,
// optimal cost and a Monte-Carlo closed-loop simulator.

#include <cmath>
#include <string>
#include <vector>

#include "drlqg/matops.hpp"
#include "drlqg/rng.hpp"

namespace drlqg {

struct SystemInstance {
    int T = 0;
    std::vector<Matrix> A, B, C;  // size T
    std::vector<Matrix> Q;        // size T + 1
    std::vector<Matrix> R;        // size T

    Index n() const { return A.empty() ? 0 : A[0].rows(); }
    Index m() const { return B.empty() ? 0 : B[0].cols(); }
    Index p() const { return C.empty() ? 0 : C[0].rows(); }

    static SystemInstance time_invariant(const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& q,
                                         const Matrix& r, int horizon, const Matrix* q_terminal = nullptr) {
        SystemInstance s;
        s.T = horizon;
        s.A.assign(horizon, a);
        s.B.assign(horizon, b);
        s.C.assign(horizon, c);
        s.R.assign(horizon, r);
        s.Q.assign(horizon + 1, q);
        if (q_terminal) s.Q[horizon] = *q_terminal;
        s.validate();
        return s;
    }

    void validate() const {
        require(T >= 1, ErrorCode::InvalidInput, "SystemInstance: horizon must be positive");
        require(static_cast<int>(A.size()) == T && static_cast<int>(B.size()) == T &&
                    static_cast<int>(C.size()) == T && static_cast<int>(R.size()) == T &&
                    static_cast<int>(Q.size()) == T + 1,
                ErrorCode::InvalidInput, "SystemInstance: sequence lengths do not match horizon");
        const Index nn = n(), mm = m(), pp = p();
        require(nn >= 1 && mm >= 1 && pp >= 1, ErrorCode::InvalidInput, "SystemInstance: empty dimensions");
        for (int t = 0; t < T; ++t) {
            const std::string at = " at t=" + std::to_string(t);
            require(A[t].rows() == nn && A[t].cols() == nn, ErrorCode::InvalidInput, "A has wrong shape" + at);
            require(B[t].rows() == nn && B[t].cols() == mm, ErrorCode::InvalidInput, "B has wrong shape" + at);
            require(C[t].rows() == pp && C[t].cols() == nn, ErrorCode::InvalidInput, "C has wrong shape" + at);
            require(R[t].rows() == mm && R[t].cols() == mm, ErrorCode::InvalidInput, "R has wrong shape" + at);
            require(A[t].allFinite() && B[t].allFinite() && C[t].allFinite() && R[t].allFinite(),
                    ErrorCode::InvalidInput, "non-finite system matrix" + at);
            require(min_eigenvalue(R[t]) >= 1e-10, ErrorCode::InvalidInput, "R is not positive definite" + at);
        }
        for (int t = 0; t <= T; ++t) {
            require(Q[t].rows() == nn && Q[t].cols() == nn && Q[t].allFinite(), ErrorCode::InvalidInput,
                    "Q has wrong shape at t=" + std::to_string(t));
            require(min_eigenvalue(Q[t]) >= -1e-10, ErrorCode::InvalidInput,
                    "Q is not positive semidefinite at t=" + std::to_string(t));
        }
    }
};

/// One covariance per noise term: x0, w_0..w_{T-1}, v_0..v_{T-1}.
struct CovarianceProfile {
    Matrix X0;
    std::vector<Matrix> W;
    std::vector<Matrix> V;

    int horizon() const { return static_cast<int>(W.size()); }

    /// Number of noise terms, 2T + 1.
    int blocks() const { return 1 + static_cast<int>(W.size() + V.size()); }

    /// Block z in the order x0, w_0..w_{T-1}, v_0..v_{T-1}.
    Matrix& block(int z) {
        const int T = horizon();
        if (z == 0) return X0;
        if (z <= T) return W[z - 1];
        return V[z - 1 - T];
    }
    const Matrix& block(int z) const { return const_cast<CovarianceProfile*>(this)->block(z); }

    void validate(const SystemInstance& sys) const {
        require(static_cast<int>(W.size()) == sys.T && static_cast<int>(V.size()) == sys.T, ErrorCode::InvalidInput,
                "CovarianceProfile: sequence lengths do not match horizon");
        require(X0.rows() == sys.n() && X0.cols() == sys.n() && X0.allFinite(), ErrorCode::InvalidInput,
                "CovarianceProfile: X0 has wrong shape");
        for (int t = 0; t < sys.T; ++t) {
            require(W[t].rows() == sys.n() && W[t].cols() == sys.n() && W[t].allFinite(), ErrorCode::InvalidInput,
                    "CovarianceProfile: W has wrong shape at t=" + std::to_string(t));
            require(V[t].rows() == sys.p() && V[t].cols() == sys.p() && V[t].allFinite(), ErrorCode::InvalidInput,
                    "CovarianceProfile: V has wrong shape at t=" + std::to_string(t));
        }
    }

    CovarianceProfile combine(double alpha, const CovarianceProfile& other) const {
        CovarianceProfile out = *this;
        for (int z = 0; z < blocks(); ++z)
            out.block(z) = symmetrize((1.0 - alpha) * block(z) + alpha * other.block(z));
        return out;
    }

    double distance(const CovarianceProfile& other) const {
        double acc = 0.0;
        for (int z = 0; z < blocks(); ++z) acc += (block(z) - other.block(z)).squaredNorm();
        return std::sqrt(acc);
    }
};

struct LqgSolution {
    std::vector<Matrix> P;           // t = 0..T
    std::vector<Matrix> K;           // t = 0..T-1
    std::vector<Matrix> Sigma_filt;  // Sigma_t, t = 0..T-1
    std::vector<Matrix> Sigma_pred;  // Sigma_{t|t-1}, t = 0..T, Sigma_{0|-1} = X0
    std::vector<Matrix> L;           // t = 0..T-1
    double cost = 0.0;
};

struct RiccatiResult {
    std::vector<Matrix> P;
    std::vector<Matrix> K;
};

inline RiccatiResult riccati_backward(const SystemInstance& sys) {
    sys.validate();
    const int T = sys.T;
    RiccatiResult out;
    out.P.resize(T + 1);
    out.K.resize(T);
    out.P[T] = sys.Q[T];
    for (int t = T - 1; t >= 0; --t) {
        const Matrix& A = sys.A[t];
        const Matrix& B = sys.B[t];
        const Matrix& Pn = out.P[t + 1];
        const Matrix S = symmetrize(sys.R[t] + B.transpose() * Pn * B);
        Eigen::LLT<Matrix> llt(S);
        require(llt.info() == Eigen::Success, ErrorCode::Numeric,
                "riccati_backward: R + B'PB is singular at t=" + std::to_string(t));
        const Matrix BtPA = B.transpose() * Pn * A;
        out.K[t] = -llt.solve(BtPA);
        out.P[t] = symmetrize(sys.Q[t] + A.transpose() * Pn * A + BtPA.transpose() * out.K[t]);
    }
    return out;
}

struct KalmanResult {
    std::vector<Matrix> Sigma_filt;
    std::vector<Matrix> Sigma_pred;
    std::vector<Matrix> L;
};

inline constexpr double kCholeskyPivot = 1e-10;

/// Cholesky of a pd matrix, failing when any pivot drops below 1e-10.
inline Eigen::LLT<Matrix> checked_cholesky(const Matrix& m, const std::string& what) {
    Eigen::LLT<Matrix> llt(symmetrize(m));
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
        const Matrix& l = llt.matrixLLT();
        for (Index i = 0; i < l.rows(); ++i) ok = ok && l(i, i) * l(i, i) >= kCholeskyPivot;
    }
    require(ok, ErrorCode::Conditioning, what);
    return llt;
}

inline KalmanResult kalman_forward(const SystemInstance& sys, const CovarianceProfile& cov) {
    cov.validate(sys);
    const int T = sys.T;
    const Index n = sys.n();
    KalmanResult out;
    out.Sigma_filt.resize(T);
    out.Sigma_pred.resize(T + 1);
    out.L.resize(T);
    out.Sigma_pred[0] = symmetrize(cov.X0);
    for (int t = 0; t < T; ++t) {
        const Matrix& C = sys.C[t];
        const Matrix& Pi = out.Sigma_pred[t];
        const std::string at = " at t=" + std::to_string(t);
        auto vllt = checked_cholesky(cov.V[t], "kalman_forward: V is numerically singular" + at);
        auto mllt = checked_cholesky(C * Pi * C.transpose() + cov.V[t],
                                     "kalman_forward: innovation covariance is singular" + at);
        const Matrix PiCt = Pi * C.transpose();
        const Matrix gain = mllt.solve(PiCt.transpose()).transpose();  // Pi C' M^-1
        Matrix sigma = symmetrize(Pi - gain * PiCt.transpose());
        if (min_eigenvalue(sigma) < -kPsdClamp) {
            const Matrix IKC = Matrix::Identity(n, n) - gain * C;
            sigma = symmetrize(IKC * Pi * IKC.transpose() + gain * cov.V[t] * gain.transpose());
        }
        out.Sigma_filt[t] = sigma;
        out.L[t] = vllt.solve(C * sigma).transpose();  // Sigma C' V^-1
        out.Sigma_pred[t + 1] = symmetrize(sys.A[t] * sigma * sys.A[t].transpose() + cov.W[t]);
    }
    return out;
}

inline double lqg_cost(const SystemInstance& sys, const std::vector<Matrix>& P, const KalmanResult& kf) {
    double cost = 0.0;
    for (int t = 0; t < sys.T; ++t) cost += frob_inner(sys.Q[t] - P[t], kf.Sigma_filt[t]);
    for (int t = 0; t <= sys.T; ++t) cost += frob_inner(P[t], kf.Sigma_pred[t]);
    return cost;
}

inline LqgSolution lqg_value(const SystemInstance& sys, const CovarianceProfile& cov) {
    RiccatiResult ric = riccati_backward(sys);
    KalmanResult kf = kalman_forward(sys, cov);
    LqgSolution sol;
    sol.cost = lqg_cost(sys, ric.P, kf);
    sol.P = std::move(ric.P);
    sol.K = std::move(ric.K);
    sol.Sigma_filt = std::move(kf.Sigma_filt);
    sol.Sigma_pred = std::move(kf.Sigma_pred);
    sol.L = std::move(kf.L);
    return sol;
}

/// Lower factor F with F F' = S for a psd S (zero columns for null directions).
inline Matrix psd_factor(const Matrix& s) {
    if (s.size() == 0) return s;
    return sym_sqrt(s).matrix();
}

struct McEstimate {
    double mean_cost = 0.0;
    double std_error = 0.0;
};

/// Zero-mean Gaussian closed loop under u_t = K_t xhat_t with the Kalman
/// estimator; returns the sample mean of the quadratic cost.
inline McEstimate simulate_closed_loop(const SystemInstance& sys, const CovarianceProfile& cov,
                                       const LqgSolution& gains, long num_samples, std::uint64_t seed) {
    sys.validate();
    cov.validate(sys);
    const int T = sys.T;
    require(static_cast<int>(gains.K.size()) == T && static_cast<int>(gains.L.size()) == T, ErrorCode::InvalidInput,
            "simulate_closed_loop: gains do not match horizon");
    require(num_samples >= 2, ErrorCode::InvalidInput, "simulate_closed_loop: need at least two samples");
    const Index n = sys.n(), p = sys.p();
    const Matrix fx0 = psd_factor(cov.X0);
    std::vector<Matrix> fw(T), fv(T);
    for (int t = 0; t < T; ++t) {
        fw[t] = psd_factor(cov.W[t]);
        fv[t] = psd_factor(cov.V[t]);
    }
    Philox4x32 rng(seed);
    auto draw = [&](const Matrix& f, Index dim) {
        Vector z(dim);
        for (Index i = 0; i < dim; ++i) z(i) = rng.normal();
        return Vector(f * z);
    };
    double sum = 0.0, sumsq = 0.0;
    for (long s = 0; s < num_samples; ++s) {
        Vector x = draw(fx0, n);
        Vector xpred = Vector::Zero(n);
        double c = 0.0;
        for (int t = 0; t < T; ++t) {
            const Vector y = sys.C[t] * x + draw(fv[t], p);
            const Vector xhat = xpred + gains.L[t] * (y - sys.C[t] * xpred);
            const Vector u = gains.K[t] * xhat;
            c += x.dot(sys.Q[t] * x) + u.dot(sys.R[t] * u);
            x = sys.A[t] * x + sys.B[t] * u + draw(fw[t], n);
            xpred = sys.A[t] * xhat + sys.B[t] * u;
        }
        c += x.dot(sys.Q[T] * x);
        sum += c;
        sumsq += c * c;
    }
    const double N = static_cast<double>(num_samples);
    const double mean = sum / N;
    const double var = std::max(0.0, (sumsq - N * mean * mean) / (N - 1.0));
    return {mean, std::sqrt(var / N)};
}

}  // namespace drlqg
