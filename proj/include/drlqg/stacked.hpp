#pragma once

// Stacked trajectory matrices and purified-output policies: x = H u + G w,
// y = C x + v, eta = D w + v with D = C G. Dense, verification-scale only.

#include <string>
#include <vector>

#include "drlqg/lqg_finite.hpp"

namespace drlqg {

inline constexpr Index kMaxStackedStates = 200;

struct StackedSystem {
    int T = 0;
    Index n = 0, m = 0, p = 0;
    Matrix H;     // n(T+1) x mT
    Matrix G;     // n(T+1) x n(T+1); column blocks x0, w_0..w_{T-1}
    Matrix C;     // pT x n(T+1)
    Matrix D;     // pT x n(T+1)
    Matrix Q;     // n(T+1) block diagonal
    Matrix R;     // mT block diagonal
    Matrix Rbar;  // R + H'QH
};

/// Transition product A_{t-1} ... A_s (identity when s == t).
inline Matrix transition(const SystemInstance& sys, int t, int s) {
    Matrix out = Matrix::Identity(sys.n(), sys.n());
    for (int k = s; k < t; ++k) out = sys.A[k] * out;
    return out;
}

inline StackedSystem build_stacked(const SystemInstance& sys) {
    sys.validate();
    const int T = sys.T;
    const Index n = sys.n(), m = sys.m(), p = sys.p();
    require(n * (T + 1) <= kMaxStackedStates, ErrorCode::InvalidInput,
            "build_stacked: n(T+1) = " + std::to_string(n * (T + 1)) + " exceeds the dense limit 200");
    StackedSystem ss;
    ss.T = T;
    ss.n = n;
    ss.m = m;
    ss.p = p;
    const Index N = n * (T + 1);
    ss.H = Matrix::Zero(N, m * T);
    ss.G = Matrix::Zero(N, N);
    ss.C = Matrix::Zero(p * T, N);
    ss.Q = Matrix::Zero(N, N);
    ss.R = Matrix::Zero(m * T, m * T);
    for (int t = 0; t <= T; ++t) {
        for (int s = 0; s < t; ++s) ss.H.block(t * n, s * m, n, m) = transition(sys, t, s + 1) * sys.B[s];
        for (int j = 0; j <= t; ++j) ss.G.block(t * n, j * n, n, n) = transition(sys, t, j);
        ss.Q.block(t * n, t * n, n, n) = sys.Q[t];
    }
    for (int t = 0; t < T; ++t) {
        ss.C.block(t * p, t * n, p, n) = sys.C[t];
        ss.R.block(t * m, t * m, m, m) = sys.R[t];
    }
    ss.D = ss.C * ss.G;
    ss.Rbar = symmetrize(ss.R + ss.H.transpose() * ss.Q * ss.H);
    return ss;
}

/// u = q + U eta with U block lower triangular.
struct AffinePolicy {
    Matrix U;
    Vector q;
};

inline bool is_block_lower(const Matrix& U, Index rb, Index cb) {
    const Index nr = U.rows() / rb, nc = U.cols() / cb;
    for (Index t = 0; t < nr; ++t)
        for (Index s = t + 1; s < nc; ++s)
            if (!U.block(t * rb, s * cb, rb, cb).isZero(0.0)) return false;
    return true;
}

inline void check_policy(const StackedSystem& ss, const Matrix& U, const Vector& q, const char* who) {
    require(U.rows() == ss.m * ss.T && U.cols() == ss.p * ss.T && q.size() == ss.m * ss.T, ErrorCode::InvalidInput,
            std::string(who) + ": policy dimensions do not match the stacked system");
    require(is_block_lower(U, ss.m, ss.p), ErrorCode::InvalidInput, std::string(who) + ": policy is not causal");
}

/// Stacked first/second moments of (x0, w) and v. Off-diagonal blocks must
/// be exactly zero (uncorrelated noise terms).
struct StackedMoments {
    Vector mu_w, mu_v;
    Matrix M_w, M_v;
};

inline StackedMoments stack_moments(const CovarianceProfile& cov, const std::vector<Vector>& means = {}) {
    const int T = cov.horizon();
    const int Z = cov.blocks();
    require(means.empty() || static_cast<int>(means.size()) == Z, ErrorCode::InvalidInput,
            "stack_moments: expected one mean per noise term");
    std::vector<Matrix> mw, mv;
    std::vector<Vector> uw, uv;
    for (int z = 0; z < Z; ++z) {
        const Matrix& S = cov.block(z);
        const Vector mu = means.empty() ? Vector::Zero(S.rows()) : means[z];
        const Matrix M = symmetrize(S + mu * mu.transpose());
        (z <= T ? mw : mv).push_back(M);
        (z <= T ? uw : uv).push_back(mu);
    }
    auto cat = [](const std::vector<Vector>& vs) {
        Index len = 0;
        for (const auto& v : vs) len += v.size();
        Vector out(len);
        Index o = 0;
        for (const auto& v : vs) {
            out.segment(o, v.size()) = v;
            o += v.size();
        }
        return out;
    };
    return {cat(uw), cat(uv), block_diag(mw), block_diag(mv)};
}

inline void check_uncorrelated(const Matrix& M, Index first, Index rest, const char* who) {
    // blocks: first x first, then (rows - first)/rest blocks of size rest
    std::vector<std::pair<Index, Index>> blocks{{0, first}};
    for (Index o = first; o < M.rows(); o += rest) blocks.push_back({o, rest});
    for (size_t i = 0; i < blocks.size(); ++i)
        for (size_t j = 0; j < blocks.size(); ++j)
            if (i != j)
                require(M.block(blocks[i].first, blocks[j].first, blocks[i].second, blocks[j].second).isZero(0.0),
                        ErrorCode::Unsupported, std::string(who) + ": correlated noise stacks are not supported");
}

inline void check_moments(const StackedSystem& ss, const StackedMoments& mo, const char* who) {
    const Index N = ss.n * (ss.T + 1), P = ss.p * ss.T;
    require(mo.mu_w.size() == N && mo.M_w.rows() == N && mo.M_w.cols() == N && mo.mu_v.size() == P &&
                mo.M_v.rows() == P && mo.M_v.cols() == P,
            ErrorCode::InvalidInput, std::string(who) + ": moment stack dimensions do not match");
    check_uncorrelated(mo.M_w, ss.n, ss.n, who);
    check_uncorrelated(mo.M_v, ss.p, ss.p, who);
}

/// Expected cost E[x'Qx + u'Ru] under u = q + U eta when distinct noise
/// terms have zero cross second moments, E[z_i z_j'] = 0. For independent
/// terms that holds when at most one of them has a nonzero mean.
inline double affine_objective(const StackedSystem& ss, const AffinePolicy& pol, const StackedMoments& mo) {
    check_policy(ss, pol.U, pol.q, "affine_objective");
    check_moments(ss, mo, "affine_objective");
    const Matrix UD = pol.U * ss.D;
    const Matrix P = ss.G + ss.H * UD;
    const Matrix ups_w = UD.transpose() * ss.R * UD + P.transpose() * ss.Q * P;
    const Matrix ups_v = pol.U.transpose() * ss.Rbar * pol.U;
    const Vector lin_w = (ss.Rbar * UD + ss.H.transpose() * ss.Q * ss.G) * mo.mu_w;
    const Vector lin_v = ss.Rbar * pol.U * mo.mu_v;
    return frob_inner(ups_w, mo.M_w) + frob_inner(ups_v, mo.M_v) + 2.0 * pol.q.dot(lin_w + lin_v) +
           pol.q.dot(ss.Rbar * pol.q);
}

/// Cost matrices of a fixed linear policy: cost = <Ups_w, M_w> + <Ups_v, M_v>.
struct PolicyCostMatrices {
    Matrix ups_w, ups_v;
};

inline PolicyCostMatrices policy_cost_matrices(const StackedSystem& ss, const Matrix& U) {
    check_policy(ss, U, Vector::Zero(ss.m * ss.T), "policy_cost_matrices");
    const Matrix UD = U * ss.D;
    const Matrix P = ss.G + ss.H * UD;
    return {symmetrize(UD.transpose() * ss.R * UD + P.transpose() * ss.Q * P),
            symmetrize(U.transpose() * ss.Rbar * U)};
}

inline Vector optimal_intercept(const StackedSystem& ss, const Matrix& U, const Vector& mu_w, const Vector& mu_v) {
    check_policy(ss, U, Vector::Zero(ss.m * ss.T), "optimal_intercept");
    const Vector k = (ss.Rbar * U * ss.D + ss.H.transpose() * ss.Q * ss.G) * mu_w + ss.Rbar * U * mu_v;
    Eigen::LLT<Matrix> llt(ss.Rbar);
    require(llt.info() == Eigen::Success, ErrorCode::Numeric, "optimal_intercept: Rbar is not positive definite");
    return -llt.solve(k);
}

enum class PolicyDirection { OutputToPurified, PurifiedToOutput };

/// Output feedback u = q' + U' y and purified feedback u = q + U eta are
/// related through the unit lower triangular matrix I + U C H.
inline AffinePolicy policy_convert(const StackedSystem& ss, PolicyDirection dir, const Matrix& U_in,
                                   const Vector& q_in) {
    check_policy(ss, U_in, q_in, "policy_convert");
    const Index mt = ss.m * ss.T;
    const Matrix CH = ss.C * ss.H;
    const double sign = dir == PolicyDirection::PurifiedToOutput ? 1.0 : -1.0;
    const Matrix L = Matrix::Identity(mt, mt) + sign * U_in * CH;
    const auto tri = L.triangularView<Eigen::UnitLower>();
    return {tri.solve(U_in), tri.solve(q_in)};
}

/// u_t = K_t xhat_t written as a causal map on outputs and converted to the
/// purified parameterization.
inline AffinePolicy kalman_policy_output(const SystemInstance& sys, const LqgSolution& sol) {
    const int T = sys.T;
    const Index n = sys.n(), m = sys.m(), p = sys.p();
    Matrix U = Matrix::Zero(m * T, p * T);
    std::vector<Matrix> phi(T);  // phi[s] = Phi_{t,s} for the current t
    for (int t = 0; t < T; ++t) {
        if (t > 0) {
            const Matrix prop = (Matrix::Identity(n, n) - sol.L[t] * sys.C[t]) *
                                (sys.A[t - 1] + sys.B[t - 1] * sol.K[t - 1]);
            for (int s = 0; s < t; ++s) phi[s] = prop * phi[s];
        }
        phi[t] = Matrix::Identity(n, n);
        for (int s = 0; s <= t; ++s) U.block(t * m, s * p, m, p) = sol.K[t] * phi[s] * sol.L[s];
    }
    return {U, Vector::Zero(m * T)};
}

inline AffinePolicy kalman_policy_to_purified(const SystemInstance& sys, const CovarianceProfile& cov) {
    const StackedSystem ss = build_stacked(sys);
    const LqgSolution sol = lqg_value(sys, cov);
    const AffinePolicy out = kalman_policy_output(sys, sol);
    return policy_convert(ss, PolicyDirection::OutputToPurified, out.U, out.q);
}

struct InnerMinimum {
    AffinePolicy policy;
    double value = 0.0;
};

/// Minimizes the affine objective over causal (U, q). With q eliminated in
/// closed form the objective is <U, Rbar U S> + 2 <U, F> + const with
/// S = D M_w D' + M_v - nu nu', nu = D mu_w + mu_v; the normal equations are
/// solved over the causal entries of U only.
inline InnerMinimum min_causal_objective(const StackedSystem& ss, const StackedMoments& mo) {
    check_moments(ss, mo, "min_causal_objective");
    const Index mt = ss.m * ss.T, pt = ss.p * ss.T;
    const Vector nu = ss.D * mo.mu_w + mo.mu_v;
    const Matrix S = symmetrize(ss.D * mo.M_w * ss.D.transpose() + mo.M_v - nu * nu.transpose());
    const Matrix HQG = ss.H.transpose() * ss.Q * ss.G;
    const Vector k = HQG * mo.mu_w;
    const Matrix F = HQG * mo.M_w * ss.D.transpose() - k * nu.transpose();

    std::vector<Index> idx;  // column-major positions of causal entries
    for (Index c = 0; c < pt; ++c)
        for (Index r = 0; r < mt; ++r)
            if (c / ss.p <= r / ss.m) idx.push_back(c * mt + r);
    const Index nv = static_cast<Index>(idx.size());
    // vec(Rbar U S) = (S (x) Rbar) vec(U)
    Matrix A(nv, nv);
    Vector b(nv);
    for (Index i = 0; i < nv; ++i) {
        const Index ri = idx[i] % mt, ci = idx[i] / mt;
        b(i) = -F(ri, ci);
        for (Index j = 0; j < nv; ++j) {
            const Index rj = idx[j] % mt, cj = idx[j] / mt;
            A(i, j) = S(ci, cj) * ss.Rbar(ri, rj);
        }
    }
    // With several nonzero-mean terms S can be indefinite; the objective is then unbounded below in U.
    Eigen::LLT<Matrix> llt(symmetrize(A));
    require(llt.info() == Eigen::Success, ErrorCode::Unsupported,
            "min_causal_objective: objective is not convex in U for these moments "
            "(mean-adjusted purified-output second moment is not positive definite)");
    const Vector sol = llt.solve(b);
    Matrix U = Matrix::Zero(mt, pt);
    for (Index i = 0; i < nv; ++i) U(idx[i] % mt, idx[i] / mt) = sol(i);
    InnerMinimum out;
    out.policy.U = U;
    out.policy.q = optimal_intercept(ss, U, mo.mu_w, mo.mu_v);
    out.value = affine_objective(ss, out.policy, mo);
    return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo simulation of stacked policies on the physical dynamics

struct NoiseSampler {
    std::vector<Matrix> factors;
    std::vector<Vector> means;

    NoiseSampler(const CovarianceProfile& cov, const std::vector<Vector>& mu) {
        for (int z = 0; z < cov.blocks(); ++z) {
            factors.push_back(psd_factor(cov.block(z)));
            means.push_back(mu.empty() ? Vector::Zero(cov.block(z).rows()) : mu[z]);
        }
    }

    Vector draw(int z, Philox4x32& rng) const {
        Vector e(factors[z].cols());
        for (Index i = 0; i < e.size(); ++i) e(i) = rng.normal();
        return means[z] + factors[z] * e;
    }
};

/// Simulates u = q + U eta (purified) or u = q + U y (output feedback) on the
/// true dynamics step by step.
inline McEstimate simulate_stacked_policy(const SystemInstance& sys, const AffinePolicy& pol, bool purified,
                                          const CovarianceProfile& cov, const std::vector<Vector>& means,
                                          long num_samples, std::uint64_t seed) {
    const int T = sys.T;
    const Index n = sys.n(), m = sys.m(), p = sys.p();
    const NoiseSampler ns(cov, means);
    Philox4x32 rng(seed);
    double sum = 0.0, sumsq = 0.0;
    for (long s = 0; s < num_samples; ++s) {
        Vector x = ns.draw(0, rng);
        Vector xf = Vector::Zero(n);  // noise-free copy for purified outputs
        Vector sig(p * T);
        double c = 0.0;
        for (int t = 0; t < T; ++t) {
            const Vector y = sys.C[t] * x + ns.draw(1 + T + t, rng);
            sig.segment(t * p, p) = purified ? Vector(y - sys.C[t] * xf) : y;
            Vector u = pol.q.segment(t * m, m);
            for (int k = 0; k <= t; ++k) u += pol.U.block(t * m, k * p, m, p) * sig.segment(k * p, p);
            c += x.dot(sys.Q[t] * x) + u.dot(sys.R[t] * u);
            x = sys.A[t] * x + sys.B[t] * u + ns.draw(1 + t, rng);
            xf = sys.A[t] * xf + sys.B[t] * u;
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
