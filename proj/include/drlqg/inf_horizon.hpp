#pragma once

// Infinite-horizon average-cost LQG: DARE, filter ARE, stationary cost via a
// joint state/error Lyapunov equation, and a stationary Frank-Wolfe solve.

#include <chrono>
#include <string>
#include <utility>

#include "drlqg/frank_wolfe.hpp"

namespace drlqg {

struct StationarySystem {
    Matrix A, B, C, Q, R;

    Index n() const { return A.rows(); }
    Index m() const { return B.cols(); }
    Index p() const { return C.rows(); }

    void validate() const {
        const Index nn = n(), mm = m(), pp = p();
        require(nn >= 1 && A.cols() == nn && B.rows() == nn && C.cols() == nn && Q.rows() == nn && Q.cols() == nn &&
                    R.rows() == mm && R.cols() == mm && mm >= 1 && pp >= 1,
                ErrorCode::InvalidInput, "StationarySystem: inconsistent dimensions");
        require(A.allFinite() && B.allFinite() && C.allFinite() && Q.allFinite() && R.allFinite(),
                ErrorCode::InvalidInput, "StationarySystem: non-finite entries");
        require(min_eigenvalue(Q) >= 1e-10, ErrorCode::InvalidInput, "StationarySystem: Q must be positive definite");
        require(min_eigenvalue(R) >= 1e-10, ErrorCode::InvalidInput, "StationarySystem: R must be positive definite");
    }
};

struct StationarySolution {
    Matrix P, K;
    Matrix Sigma_tilde, L;
    Matrix Sigma_x, Sigma_xhat;
    double avg_cost = 0.0;
};

inline constexpr int kMaxFixedPointIters = 100000;

struct DareResult {
    Matrix P, K;
    int iterations = 0;
};

/// Riccati fixed-point iteration, by default from P = Q.
inline DareResult solve_dare(const StationarySystem& ss, const Matrix* init = nullptr) {
    ss.validate();
    const Matrix& A = ss.A;
    const Matrix& B = ss.B;
    Matrix P = init ? symmetrize(*init) : ss.Q;
    DareResult out;
    Matrix K;
    for (int it = 1;; ++it) {
        require(it <= kMaxFixedPointIters, ErrorCode::Stabilizability,
                "solve_dare: Riccati iteration did not converge (is (A, B) stabilizable?)");
        require(P.allFinite(), ErrorCode::Stabilizability, "solve_dare: Riccati iteration diverged");
        Eigen::LLT<Matrix> llt(symmetrize(ss.R + B.transpose() * P * B));
        require(llt.info() == Eigen::Success, ErrorCode::Numeric, "solve_dare: R + B'PB is singular");
        const Matrix BtPA = B.transpose() * P * A;
        K = -llt.solve(BtPA);
        const Matrix next = symmetrize(A.transpose() * P * A + ss.Q + BtPA.transpose() * K);
        const double change = (next - P).norm();
        P = next;
        out.iterations = it;
        if (change <= 1e-12 * (1.0 + P.norm())) break;
    }
    Eigen::LLT<Matrix> llt(symmetrize(ss.R + B.transpose() * P * B));
    K = -llt.solve(B.transpose() * P * A);
    require(spectral_radius(A + B * K) < 1.0 - kSchurMargin, ErrorCode::Stabilizability,
            "solve_dare: closed loop A + BK is not Schur stable");
    out.P = P;
    out.K = K;
    return out;
}

inline double dare_residual(const StationarySystem& ss, const Matrix& P) {
    const Matrix BtPA = ss.B.transpose() * P * ss.A;
    const Matrix S = ss.R + ss.B.transpose() * P * ss.B;
    const Matrix rhs = ss.A.transpose() * P * ss.A + ss.Q - BtPA.transpose() * S.llt().solve(BtPA);
    return (P - rhs).norm();
}

struct FilterAreResult {
    Matrix Sigma_tilde, L;
    int iterations = 0;
};

/// Steady-state prediction covariance and filter gain
/// L = S C' (Sigma_v + C S C')^-1.
inline FilterAreResult solve_filter_are(const StationarySystem& ss, const Matrix& sigma_w, const Matrix& sigma_v) {
    ss.validate();
    require(sigma_w.rows() == ss.n() && sigma_v.rows() == ss.p() && is_pd(sigma_w) && is_pd(sigma_v),
            ErrorCode::InvalidInput, "solve_filter_are: noise covariances must be positive definite");
    const Matrix& A = ss.A;
    const Matrix& C = ss.C;
    Matrix S = symmetrize(sigma_w);
    FilterAreResult out;
    for (int it = 1;; ++it) {
        require(it <= kMaxFixedPointIters, ErrorCode::Detectability,
                "solve_filter_are: iteration did not converge (is (A, C) detectable?)");
        require(S.allFinite(), ErrorCode::Detectability, "solve_filter_are: iteration diverged");
        Eigen::LLT<Matrix> llt(symmetrize(C * S * C.transpose() + sigma_v));
        const Matrix CSA = C * S * A.transpose();
        const Matrix next = symmetrize(A * S * A.transpose() + sigma_w - CSA.transpose() * llt.solve(CSA));
        const double change = (next - S).norm();
        S = next;
        out.iterations = it;
        if (change <= 1e-12 * (1.0 + S.norm())) break;
    }
    Eigen::LLT<Matrix> llt(symmetrize(sigma_v + C * S * C.transpose()));
    out.L = llt.solve(C * S).transpose();
    out.Sigma_tilde = S;
    require(spectral_radius(A - out.L * C * A) < 1.0 - kSchurMargin, ErrorCode::Detectability,
            "solve_filter_are: error dynamics (I - LC)A are not Schur stable");
    return out;
}

inline double filter_are_residual(const StationarySystem& ss, const Matrix& S, const Matrix& sigma_w,
                                  const Matrix& sigma_v) {
    const Matrix CSA = ss.C * S * ss.A.transpose();
    const Matrix M = ss.C * S * ss.C.transpose() + sigma_v;
    const Matrix rhs = ss.A * S * ss.A.transpose() + sigma_w - CSA.transpose() * M.llt().solve(CSA);
    return (S - rhs).norm();
}

/// Average cost of the stationary LQG controller. z = (x, e) with
/// e = x - xhat evolves as z+ = F z + Xi xi, xi = (w, v).
inline StationarySolution stationary_cost(const StationarySystem& ss, const Matrix& sigma_w, const Matrix& sigma_v) {
    const DareResult dare = solve_dare(ss);
    const FilterAreResult far = solve_filter_are(ss, sigma_w, sigma_v);
    const Index n = ss.n(), p = ss.p();
    const Matrix I = Matrix::Identity(n, n);
    Matrix F = Matrix::Zero(2 * n, 2 * n);
    F.block(0, 0, n, n) = ss.A + ss.B * dare.K;
    F.block(0, n, n, n) = -ss.B * dare.K;
    F.block(n, n, n, n) = ss.A - far.L * ss.C * ss.A;
    Matrix Xi = Matrix::Zero(2 * n, n + p);
    Xi.block(0, 0, n, n) = I;
    Xi.block(n, 0, n, n) = I - far.L * ss.C;
    Xi.block(n, n, n, p) = -far.L;
    const Matrix sxi = block_diag({sigma_w, sigma_v});
    SymMatrix sz;
    try {
        sz = solve_discrete_lyapunov(F, Xi * sxi * Xi.transpose());
    } catch (const SolverError& e) {
        fail(ErrorCode::Detectability, std::string("stationary_cost: joint dynamics unstable: ") + e.what());
    }
    const Matrix& Z = sz.matrix();
    StationarySolution sol;
    sol.P = dare.P;
    sol.K = dare.K;
    sol.Sigma_tilde = far.Sigma_tilde;
    sol.L = far.L;
    sol.Sigma_x = Z.block(0, 0, n, n);
    sol.Sigma_xhat = symmetrize(Z.block(0, 0, n, n) + Z.block(n, n, n, n) - Z.block(0, n, n, n) - Z.block(n, 0, n, n));
    sol.avg_cost = frob_inner(sol.Sigma_x, ss.Q) + frob_inner(dare.K * sol.Sigma_xhat * dare.K.transpose(), ss.R);
    return sol;
}

/// Central-difference gradient of the stationary cost in (Sigma_w, Sigma_v).
inline std::pair<Matrix, Matrix> stationary_fd_gradient(const StationarySystem& ss, const Matrix& sigma_w,
                                                        const Matrix& sigma_v, double step = 1e-5) {
    auto block_grad = [&](bool wrt_w) {
        const Matrix& base = wrt_w ? sigma_w : sigma_v;
        const Index d = base.rows();
        const double h = step * (1.0 + base.norm());
        Matrix g = Matrix::Zero(d, d);
        for (Index i = 0; i < d; ++i)
            for (Index j = i; j < d; ++j) {
                Matrix e = Matrix::Zero(d, d);
                e(i, j) = 1.0;
                e(j, i) = 1.0;
                auto eval = [&](double sgn) {
                    const Matrix pert = base + sgn * h * e;
                    return wrt_w ? stationary_cost(ss, pert, sigma_v).avg_cost
                                 : stationary_cost(ss, sigma_w, pert).avg_cost;
                };
                const double dfd = (eval(1.0) - eval(-1.0)) / (2.0 * h);
                g(i, j) = i == j ? dfd : 0.5 * dfd;
                g(j, i) = g(i, j);
            }
        return g;
    };
    return {block_grad(true), block_grad(false)};
}

struct StationaryFwResult {
    Matrix sigma_w, sigma_v;
    FwTrace trace;
};

inline StationaryFwResult solve_stationary_fw(const StationarySystem& ss, const AmbiguityBall& ball_w,
                                              const AmbiguityBall& ball_v, const FwConfig& cfg) {
    ss.validate();
    cfg.validate();
    require(ball_w.nominal.dim() == ss.n() && ball_v.nominal.dim() == ss.p(), ErrorCode::InvalidInput,
            "solve_stationary_fw: ball dimensions do not match the system");
    require(ball_w.nominal.mean.isZero(0.0) && ball_v.nominal.mean.isZero(0.0), ErrorCode::InvalidInput,
            "solve_stationary_fw: nominal means must be zero");
    const Matrix hat_w = ball_w.nominal_covariance(), hat_v = ball_v.nominal_covariance();
    require(is_pd(hat_w) && is_pd(hat_v), ErrorCode::InvalidNominal,
            "solve_stationary_fw: nominal covariances must be positive definite");
    const double floor_v = min_eigenvalue(hat_v);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    StationaryFwResult res;
    Matrix sw = hat_w, sv = hat_v;
    double lipschitz = -1.0;
    for (int k = 0; k < cfg.max_iters; ++k) {
        const double f = stationary_cost(ss, sw, sv).avg_cost;
        const auto [gw, gv] = stationary_fd_gradient(ss, sw, sv);
        const OracleResult tw = linearization_oracle(ball_w, gw, sw, 0.0, cfg.oracle_delta);
        const OracleResult tv = linearization_oracle(ball_v, gv, sv, floor_v, cfg.oracle_delta);
        const Matrix dw = tw.sigma_star.matrix() - sw, dv = tv.sigma_star.matrix() - sv;
        const double gap = frob_inner(gw, dw) + frob_inner(gv, dv);
        FwRecord rec{k, f, gap, gap / std::max(1e-300, std::abs(f)), 0.0, 0.0};
        if (gap <= cfg.gap_tol) {
            rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            res.trace.records.push_back(rec);
            res.trace.converged = true;
            break;
        }
        double alpha = 2.0 / (2.0 + k);
        if (cfg.step_rule == StepRule::LineSearchBacktracking) {
            const double dn2 = dw.squaredNorm() + dv.squaredNorm();
            if (lipschitz <= 0.0) lipschitz = std::max(1e-12, gap / dn2);
            lipschitz *= 0.9;
            for (int tries = 0;; ++tries) {
                alpha = std::min(1.0, gap / (lipschitz * dn2));
                const double fn =
                    stationary_cost(ss, symmetrize(sw + alpha * dw), symmetrize(sv + alpha * dv)).avg_cost;
                if (fn >= f + alpha * gap - 0.5 * lipschitz * alpha * alpha * dn2 || tries >= 60) break;
                lipschitz *= 2.0;
            }
        }
        sw = symmetrize(sw + alpha * dw);
        sv = symmetrize(sv + alpha * dv);
        rec.step = alpha;
        rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        res.trace.records.push_back(rec);
    }
    res.sigma_w = sw;
    res.sigma_v = sv;
    res.trace.final_profile.X0 = Matrix();
    res.trace.final_profile.W = {sw};
    res.trace.final_profile.V = {sv};
    return res;
}

}  // namespace drlqg
