#include "helpers.hpp"

using namespace drlqg;
using namespace drlqg::testing;

namespace {

SystemInstance scalar_system() {
    const Matrix one = scalar(1.0);
    return SystemInstance::time_invariant(one, one, one, one, one, 1);
}

CovarianceProfile scalar_profile(double x0, double w, double v, int T = 1) {
    CovarianceProfile c;
    c.X0 = scalar(x0);
    c.W.assign(T, scalar(w));
    c.V.assign(T, scalar(v));
    return c;
}

}  // namespace

TEST(Riccati, ScalarOneStep) {
    const auto r = riccati_backward(scalar_system());
    EXPECT_EQ(r.P[1](0, 0), 1.0);
    EXPECT_NEAR(r.P[0](0, 0), 1.5, 1e-15);
    EXPECT_NEAR(r.K[0](0, 0), -0.5, 1e-15);
}

TEST(Riccati, ZeroInputMatrix) {
    Philox4x32 rng(2);
    SystemInstance sys = random_system(rng, 3, 2, 2, 4);
    for (auto& b : sys.B) b.setZero();
    const auto r = riccati_backward(sys);
    Matrix P = sys.Q[4];
    EXPECT_EQ(r.P[4], sys.Q[4]);
    for (int t = 3; t >= 0; --t) {
        P = sys.A[t].transpose() * P * sys.A[t] + sys.Q[t];
        EXPECT_LE((r.P[t] - P).norm(), 1e-12 * (1 + P.norm()));
        EXPECT_EQ(r.K[t].norm(), 0.0);
    }
}

// Bellman operator through the joint quadratic form in (x, u), minimized by a
// generic LDLT solve of the stationarity conditions.
TEST(Riccati, MatchesJointQuadraticMinimization) {
    Philox4x32 rng(17);
    const SystemInstance sys = random_system(rng, 3, 2, 2, 5);
    const auto r = riccati_backward(sys);
    Matrix P = sys.Q[5];
    for (int t = 4; t >= 0; --t) {
        const Index n = 3, m = 2;
        Matrix J(n + m, n + m);
        Matrix AB(n, n + m);
        AB << sys.A[t], sys.B[t];
        J.setZero();
        J.topLeftCorner(n, n) = sys.Q[t];
        J.bottomRightCorner(m, m) = sys.R[t];
        J += AB.transpose() * P * AB;
        const Matrix Juu = J.bottomRightCorner(m, m), Jux = J.bottomLeftCorner(m, n);
        const Matrix u_of_x = -Juu.ldlt().solve(Jux);
        Matrix Z(n + m, n);
        Z << Matrix::Identity(n, n), u_of_x;
        P = Z.transpose() * J * Z;
        EXPECT_LE((r.P[t] - P).norm(), 1e-9 * (1 + P.norm())) << "t=" << t;
        EXPECT_LE((r.K[t] - u_of_x).norm(), 1e-9 * (1 + u_of_x.norm())) << "t=" << t;
        EXPECT_GE(min_eigenvalue(r.P[t]), -1e-10);
    }
}

TEST(Kalman, ScalarHandRecursion) {
    const SystemInstance sys = SystemInstance::time_invariant(scalar(1), scalar(1), scalar(1), scalar(1), scalar(1), 2);
    const auto kf = kalman_forward(sys, scalar_profile(1, 1, 1, 2));
    EXPECT_NEAR(kf.Sigma_filt[0](0, 0), 0.5, 1e-15);
    EXPECT_NEAR(kf.Sigma_pred[1](0, 0), 1.5, 1e-15);
    EXPECT_NEAR(kf.Sigma_filt[1](0, 0), 0.6, 1e-15);
    EXPECT_NEAR(kf.L[0](0, 0), 0.5, 1e-15);
}

TEST(Kalman, UninformativeObservations) {
    Philox4x32 rng(3);
    SystemInstance sys = random_system(rng, 2, 1, 2, 3);
    for (auto& c : sys.C) c.setZero();
    CovarianceProfile cov = random_profile(rng, 2, 2, 3);
    for (auto& v : cov.V) v = Matrix::Identity(2, 2);
    const auto kf = kalman_forward(sys, cov);
    for (int t = 0; t < 3; ++t) {
        EXPECT_LE((kf.Sigma_filt[t] - kf.Sigma_pred[t]).norm(), 1e-14);
        EXPECT_LE((kf.Sigma_pred[t + 1] - (sys.A[t] * kf.Sigma_filt[t] * sys.A[t].transpose() + cov.W[t])).norm(),
                  1e-12);
    }
}

// Conditional covariance of x_t given y_0..y_t from the joint Gaussian built
// with the stacked matrices (controls do not affect covariances).
TEST(Kalman, MatchesJointGaussianConditioning) {
    Philox4x32 rng(23);
    const int T = 4;
    const Index n = 3, p = 2;
    const SystemInstance sys = random_system(rng, n, 1, p, T);
    const CovarianceProfile cov = random_profile(rng, n, p, T);
    const auto kf = kalman_forward(sys, cov);
    const StackedSystem ss = build_stacked(sys);
    const StackedMoments mo = stack_moments(cov);
    const Matrix X = ss.G * mo.M_w * ss.G.transpose();  // Cov(x)
    const Matrix Y = ss.C * X * ss.C.transpose() + mo.M_v;
    const Matrix XY = X * ss.C.transpose();
    for (int t = 0; t < T; ++t) {
        const Index k = p * (t + 1);
        const Matrix Sxx = X.block(t * n, t * n, n, n);
        const Matrix Sxy = XY.block(t * n, 0, n, k);
        const Matrix Syy = Y.topLeftCorner(k, k);
        const Matrix cond = Sxx - Sxy * Syy.ldlt().solve(Sxy.transpose());
        EXPECT_LE((kf.Sigma_filt[t] - cond).norm(), 1e-9 * (1 + cond.norm())) << "t=" << t;
    }
}

TEST(Kalman, SingularNoiseNamesTime) {
    const SystemInstance sys = SystemInstance::time_invariant(scalar(1), scalar(1), scalar(1), scalar(1), scalar(1), 3);
    CovarianceProfile cov = scalar_profile(1, 1, 1, 3);
    cov.V[2] = scalar(1e-14);
    try {
        kalman_forward(sys, cov);
        ADD_FAILURE();
    } catch (const SolverError& e) {
        EXPECT_EQ(e.code(), ErrorCode::Conditioning);
        EXPECT_NE(std::string(e.what()).find("t=2"), std::string::npos) << e.what();
    }
}

TEST(LqgValue, CostlessStates) {
    Philox4x32 rng(4);
    SystemInstance sys = random_system(rng, 2, 2, 2, 3);
    for (auto& q : sys.Q) q.setZero();
    const auto sol = lqg_value(sys, random_profile(rng, 2, 2, 3));
    EXPECT_NEAR(sol.cost, 0.0, 1e-14);
    for (const auto& k : sol.K) EXPECT_EQ(k.norm(), 0.0);
}

// Hand expansion: x0 ~ N(0,1), xhat0 = y0/2, u0 = -xhat0/2, x1 = e + xhat0/2 + w0.
// E[x0^2] + E[u0^2] + E[x1^2] = 1 + 0.125 + (0.5 + 0.125 + 1) = 2.75.
TEST(LqgValue, ScalarHandComposition) {
    const auto sys = scalar_system();
    const auto cov = scalar_profile(1, 1, 1);
    const auto sol = lqg_value(sys, cov);
    EXPECT_NEAR(sol.cost, 2.75, 1e-14);
    EXPECT_EQ(sol.P[1], sys.Q[1]);
    const auto mc = simulate_closed_loop(sys, cov, sol, 100000, 1);
    EXPECT_LE(std::abs(mc.mean_cost - sol.cost), 3 * mc.std_error);
}

TEST(LqgValue, MatchesMonteCarloRandom) {
    Philox4x32 rng(31);
    for (int k = 0; k < 3; ++k) {
        const SystemInstance sys = random_system(rng, 2, 1, 2, 4);
        const CovarianceProfile cov = random_profile(rng, 2, 2, 4);
        const auto sol = lqg_value(sys, cov);
        const auto mc = simulate_closed_loop(sys, cov, sol, 100000, 100 + k);
        EXPECT_LE(std::abs(mc.mean_cost - sol.cost), 3 * mc.std_error) << "instance " << k;
        EXPECT_GE(sol.cost, 0.0);
    }
}

TEST(Simulate, NoiselessIsZero) {
    const auto sys = scalar_system();
    CovarianceProfile cov = scalar_profile(0, 0, 1);
    const auto sol = lqg_value(sys, cov);
    cov.V[0] = scalar(0.0);  // simulate with zero observation noise
    const auto mc = simulate_closed_loop(sys, cov, sol, 1000, 2);
    EXPECT_EQ(mc.mean_cost, 0.0);
}

TEST(Simulate, StdErrorScaling) {
    const auto sys = scalar_system();
    const auto cov = scalar_profile(1, 1, 1);
    const auto sol = lqg_value(sys, cov);
    const auto a = simulate_closed_loop(sys, cov, sol, 20000, 5);
    const auto b = simulate_closed_loop(sys, cov, sol, 80000, 6);
    EXPECT_NEAR(a.std_error / b.std_error, 2.0, 0.4);
    const auto c = simulate_closed_loop(sys, cov, sol, 20000, 5);
    EXPECT_EQ(a.mean_cost, c.mean_cost);
}

TEST(LqgValue, MonotoneInNoise) {
    Philox4x32 rng(8);
    for (int k = 0; k < 20; ++k) {
        const SystemInstance sys = random_system(rng, 2, 1, 2, 3);
        const CovarianceProfile a = random_profile(rng, 2, 2, 3);
        CovarianceProfile b = a;
        for (int z = 0; z < b.blocks(); ++z) {
            const Matrix g = random_matrix(rng, b.block(z).rows(), b.block(z).rows(), 0.5);
            b.block(z) += g * g.transpose();
        }
        EXPECT_GE(lqg_value(sys, b).cost, lqg_value(sys, a).cost - 1e-9);
    }
}

TEST(LqgValue, ConcaveAlongSegments) {
    Philox4x32 rng(9);
    for (int k = 0; k < 20; ++k) {
        const SystemInstance sys = random_system(rng, 2, 2, 1, 3);
        const CovarianceProfile a = random_profile(rng, 2, 1, 3, 0.1, 3.0);
        const CovarianceProfile b = random_profile(rng, 2, 1, 3, 0.1, 3.0);
        const double fa = lqg_value(sys, a).cost, fb = lqg_value(sys, b).cost;
        for (double lam : {0.25, 0.5, 0.75})
            EXPECT_GE(lqg_value(sys, b.combine(lam, a)).cost, lam * fa + (1 - lam) * fb - 1e-8);
    }
}

TEST(LqgValue, GainsIndependentOfNoise) {
    Philox4x32 rng(10);
    const SystemInstance sys = random_system(rng, 3, 2, 2, 4);
    const auto s1 = lqg_value(sys, random_profile(rng, 3, 2, 4));
    const auto s2 = lqg_value(sys, random_profile(rng, 3, 2, 4));
    for (int t = 0; t < 4; ++t) EXPECT_EQ(s1.K[t], s2.K[t]);
    for (int t = 0; t <= 4; ++t) EXPECT_EQ(s1.P[t], s2.P[t]);
}

TEST(SystemInstance, ValidationErrors) {
    const Matrix one = scalar(1.0);
    expect_error(ErrorCode::InvalidInput, [&] { SystemInstance::time_invariant(one, one, one, one, scalar(0.0), 1); });
    expect_error(ErrorCode::InvalidInput, [&] { SystemInstance::time_invariant(one, one, one, scalar(-1.0), one, 1); });
    expect_error(ErrorCode::InvalidInput, [&] { SystemInstance::time_invariant(one, one, one, one, one, 0); });
    const auto sys = scalar_system();
    CovarianceProfile bad = scalar_profile(1, 1, 1);
    bad.W.push_back(scalar(1));
    expect_error(ErrorCode::InvalidInput, [&] { lqg_value(sys, bad); });
}
