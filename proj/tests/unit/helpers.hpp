#pragma once

#include <gtest/gtest.h>

#include "drlqg/drlqg.hpp"

namespace drlqg::testing {

inline Matrix random_matrix(Philox4x32& rng, Index r, Index c, double scale = 1.0) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

/// Random time-varying system with A scaled to spectral radius about 0.9.
inline SystemInstance random_system(Philox4x32& rng, Index n, Index m, Index p, int T) {
    SystemInstance sys;
    sys.T = T;
    for (int t = 0; t < T; ++t) {
        Matrix a = random_matrix(rng, n, n);
        const double r = spectral_radius(a);
        if (r > 0) a *= 0.9 / r;
        sys.A.push_back(a);
        sys.B.push_back(random_matrix(rng, n, m));
        sys.C.push_back(random_matrix(rng, p, n));
        sys.R.push_back(random_spd(rng, m, 0.5, 2.0));
    }
    for (int t = 0; t <= T; ++t) sys.Q.push_back(random_spd(rng, n, 0.2, 2.0));
    return sys;
}

inline CovarianceProfile random_profile(Philox4x32& rng, Index n, Index p, int T, double lo = 0.5, double hi = 2.0) {
    CovarianceProfile c;
    c.X0 = random_spd(rng, n, lo, hi);
    for (int t = 0; t < T; ++t) {
        c.W.push_back(random_spd(rng, n, lo, hi));
        c.V.push_back(random_spd(rng, p, lo, hi));
    }
    return c;
}

inline Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

inline double max_abs_diff(const CovarianceProfile& a, const CovarianceProfile& b) {
    double out = 0.0;
    for (int z = 0; z < a.blocks(); ++z) out = std::max(out, (a.block(z) - b.block(z)).cwiseAbs().maxCoeff());
    return out;
}

template <typename Fn>
void expect_error(ErrorCode code, Fn&& fn) {
    try {
        fn();
        ADD_FAILURE() << "expected error " << to_string(code);
    } catch (const SolverError& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

}  // namespace drlqg::testing
