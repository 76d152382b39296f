#include <complex>

#include "helpers.hpp"

using namespace drlqg;
using namespace drlqg::testing;

TEST(SymMatrix, ConstructorSymmetrizes) {
    Matrix m(2, 2);
    m << 1, 2, 4, 3;
    const SymMatrix s(m);
    EXPECT_EQ(s(0, 1), 3.0);
    EXPECT_EQ(s(1, 0), 3.0);
    expect_error(ErrorCode::InvalidInput, [] { SymMatrix(Matrix::Zero(2, 3)); });
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 0) = std::nan("");
    expect_error(ErrorCode::InvalidInput, [&] { SymMatrix{bad}; });
}

TEST(SymSqrt, Identity) { EXPECT_TRUE(sym_sqrt(Matrix::Identity(3, 3)).matrix().isApprox(Matrix::Identity(3, 3))); }

TEST(SymSqrt, Diagonal) {
    const Matrix r = sym_sqrt(Vector(Eigen::Vector2d(4, 9)).asDiagonal().toDenseMatrix());
    EXPECT_NEAR(r(0, 0), 2.0, 1e-14);
    EXPECT_NEAR(r(1, 1), 3.0, 1e-14);
    EXPECT_NEAR(r(0, 1), 0.0, 1e-14);
}

TEST(SymSqrt, RandomReconstructs) {
    Philox4x32 rng(11);
    for (int k = 0; k < 100; ++k) {
        const Index d = 1 + k % 12;
        const Matrix g = random_matrix(rng, d, d);
        const Matrix s = g * g.transpose();
        const Matrix r = sym_sqrt(s);
        EXPECT_LE((r * r - s).norm(), 1e-9 * (1 + s.norm()));
        EXPECT_GE(min_eigenvalue(r), -1e-12);
        // Independent oracle: eigen decomposition computed here.
        Eigen::SelfAdjointEigenSolver<Matrix> es(s);
        const Matrix ref = es.eigenvectors() * es.eigenvalues().cwiseMax(0).cwiseSqrt().asDiagonal() *
                           es.eigenvectors().transpose();
        EXPECT_LE((ref - r).norm(), 1e-9 * (1 + s.norm()));
    }
}

TEST(SymSqrt, ClampsTinyNegativeRejectsLarge) {
    Matrix s = Matrix::Identity(2, 2);
    s(1, 1) = -5e-11;
    EXPECT_NEAR(sym_sqrt(s)(1, 1), 0.0, 1e-15);
    s(1, 1) = -1e-6;
    expect_error(ErrorCode::InvalidInput, [&] { sym_sqrt(s); });
    expect_error(ErrorCode::InvalidInput, [] { sym_sqrt(Matrix::Zero(2, 3)); });
}

TEST(LoewnerGeq, Examples) {
    const Matrix I = Matrix::Identity(3, 3);
    auto c = loewner_geq(2 * I, I, 1e-8);
    EXPECT_TRUE(c.is_psd);
    EXPECT_NEAR(c.min_eigenvalue, 1.0, 1e-14);
    EXPECT_FALSE(loewner_geq(I, 2 * I, 1e-8).is_psd);
    c = loewner_geq(I, I, 1e-8);
    EXPECT_TRUE(c.is_psd);
    EXPECT_NEAR(c.min_eigenvalue, 0.0, 1e-8);
    expect_error(ErrorCode::InvalidInput, [&] { loewner_geq(I, Matrix::Identity(2, 2), 1e-8); });
}

TEST(LoewnerGeq, PdImpliesPsdAndAntisymmetry) {
    Philox4x32 rng(5);
    const double tol = 1e-9;
    for (int k = 0; k < 50; ++k) {
        const Index d = 1 + k % 4;
        const Matrix a = random_spd(rng, d, 0.5, 2);
        const Matrix b = k % 2 ? a : random_spd(rng, d, 0.5, 2);
        const auto ab = loewner_geq(a, b, tol), ba = loewner_geq(b, a, tol);
        if (ab.is_pd) {
            EXPECT_TRUE(ab.is_psd);
        }
        if (ab.is_psd && ba.is_psd) {
            EXPECT_LE((a - b).norm(), d * tol * std::max(1.0, a.norm()));
        }
    }
}

TEST(Lyapunov, Examples) {
    const Matrix s = solve_discrete_lyapunov(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
    EXPECT_TRUE(s.isApprox(Matrix::Identity(2, 2)));
    EXPECT_NEAR(solve_discrete_lyapunov(scalar(0.5), scalar(1.0))(0, 0), 4.0 / 3.0, 1e-14);
    expect_error(ErrorCode::Instability, [] { solve_discrete_lyapunov(scalar(1.0), scalar(1.0)); });
}

TEST(Lyapunov, MatchesTruncatedSeries) {
    Philox4x32 rng(3);
    for (int k = 0; k < 10; ++k) {
        const Index d = 1 + k % 5;
        Matrix f = random_matrix(rng, d, d);
        f *= 0.8 / std::max(1e-3, spectral_radius(f));
        const Matrix q = random_spd(rng, d, 0.1, 1.0);
        Matrix series = Matrix::Zero(d, d), term = q;
        for (int i = 0; i <= 10000; ++i) {
            series += term;
            term = f * term * f.transpose();
        }
        EXPECT_LE((solve_discrete_lyapunov(f, q).matrix() - series).norm(), 1e-8);
    }
}

TEST(Lyapunov, ResidualRandomSystems) {
    Philox4x32 rng(4);
    for (int k = 0; k < 100; ++k) {
        const Index d = 1 + k % 12;
        Matrix f = random_matrix(rng, d, d);
        f *= 0.95 / std::max(1e-3, spectral_radius(f));
        const Matrix q = random_spd(rng, d, 0.1, 2.0);
        const Matrix s = solve_discrete_lyapunov(f, q);
        EXPECT_LE((s - f * s * f.transpose() - q).norm(), 1e-9 * (1 + q.norm()));
        EXPECT_GE(min_eigenvalue(s), -1e-10);
    }
}

TEST(Lyapunov, DoublingPathAboveFifty) {
    Philox4x32 rng(8);
    const Index d = 55;
    Matrix f = random_matrix(rng, d, d);
    f *= 0.7 / spectral_radius(f);
    const Matrix q = random_spd(rng, d, 0.5, 1.0);
    const Matrix s = solve_discrete_lyapunov(f, q);
    EXPECT_LE((s - f * s * f.transpose() - q).norm(), 1e-9 * (1 + q.norm()));
}

TEST(SpectralRadius, Examples) {
    EXPECT_NEAR(spectral_radius(Vector(Eigen::Vector2d(0.3, -0.9)).asDiagonal().toDenseMatrix()), 0.9, 1e-15);
    EXPECT_EQ(spectral_radius(Matrix::Zero(3, 3)), 0.0);
    // Companion matrix of z^2 - 0.2 z - 0.03 = (z - 0.3)(z + 0.1).
    Matrix c(2, 2);
    c << 0.2, 0.03, 1, 0;
    const double disc = std::sqrt(0.2 * 0.2 + 4 * 0.03);
    const double root = std::max(std::abs((0.2 + disc) / 2), std::abs((0.2 - disc) / 2));
    EXPECT_NEAR(root, 0.3, 1e-15);
    EXPECT_NEAR(spectral_radius(c), root, 1e-14);
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = INFINITY;
    expect_error(ErrorCode::InvalidInput, [&] { spectral_radius(bad); });
}

TEST(SpdHelpers, InverseAndLogdet) {
    Matrix s(2, 2);
    s << 2, 1, 1, 2;
    EXPECT_TRUE((spd_inverse(s, "t") * s).isApprox(Matrix::Identity(2, 2), 1e-14));
    EXPECT_NEAR(spd_logdet(s, "t"), std::log(3.0), 1e-14);
    expect_error(ErrorCode::Conditioning, [] { spd_inverse(Matrix::Zero(2, 2), "t"); });
}
