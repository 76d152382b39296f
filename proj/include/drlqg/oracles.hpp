#pragma once

// Linearization oracles: maximize <Gamma, Sigma> over the covariances of a
// zero-mean ambiguity ball. Each analytic oracle reduces to a scalar dual
// bisection computed once in a fixed eigenbasis.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "drlqg/divergences.hpp"

namespace drlqg {

struct BisectionStep {
    double gamma;
    double slope;
};

struct OracleResult {
    SymMatrix sigma_star;
    double dual_gamma = 0.0;
    bool active = false;
    double subopt_delta_achieved = 1.0;
    int iterations = 0;
    std::vector<BisectionStep> path;
};

inline constexpr double kGradientNegTol = 1e-8;
inline constexpr int kMaxBisection = 200;

/// Symmetrizes Gamma and clamps small negative eigenvalues; larger negative
/// eigenvalues mean the caller passed something that is not a gradient of
/// a noise-monotone objective.
inline SymEigen clamp_gradient(const Matrix& gamma) {
    check_square_finite(gamma, "oracle");
    SymEigen e = sym_eig(gamma);
    const double scale = std::max(1.0, e.values.cwiseAbs().maxCoeff());
    require(e.values(0) >= -kGradientNegTol * scale, ErrorCode::InvalidGradient,
            "oracle: gradient has eigenvalue " + std::to_string(e.values(0)));
    e.values = e.values.cwiseMax(0.0);
    return e;
}

inline OracleResult nominal_result(const Matrix& sigma_hat) {
    OracleResult r;
    r.sigma_star = SymMatrix(sigma_hat);
    r.active = false;
    r.subopt_delta_achieved = 1.0;
    return r;
}

/// Scalar dual model shared by the bisection driver.
struct DualModel {
    std::function<double(double)> slope;   // derivative of the dual; > 0 means feasible
    std::function<double(double)> dual;    // dual value minus <Gamma, Sigma_ref>
    std::function<double(double)> primal;  // <Gamma, Sigma(gamma) - Sigma_ref>
};

struct BisectionOutcome {
    double gamma;
    double delta;
    int iterations;
    std::vector<BisectionStep> path;
};

/// Bisection on [lo, hi] with slope(lo) < 0 <= slope(hi). Stops once the
/// upper end is feasible, achieves primal >= delta * dual, and the bracket is
/// narrower than 1e-12 * hi0.
inline BisectionOutcome bisect_dual(const DualModel& m, double lo, double hi, double delta, const char* who) {
    BisectionOutcome out{hi, 1.0, 0, {}};
    double slope_hi = m.slope(hi);
    for (int grow = 0; slope_hi < 0.0; ++grow) {  // guard against rounding in the analytic upper bound
        require(grow < 60, ErrorCode::OracleFailure, std::string(who) + ": upper bracket is infeasible");
        lo = hi;
        hi *= 2.0;
        slope_hi = m.slope(hi);
    }
    const double width_tol = 1e-12 * hi;
    out.path.push_back({hi, slope_hi});
    for (int it = 1; it <= kMaxBisection; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;  // bracket exhausted at double precision
        const double s = m.slope(mid);
        out.path.push_back({mid, s});
        if (s < 0.0) {
            lo = mid;
        } else {
            hi = mid;
            slope_hi = s;
        }
        out.iterations = it;
        const double d = m.dual(hi);
        const double p = m.primal(hi);
        if (slope_hi >= 0.0 && p >= delta * d && hi - lo <= width_tol) break;
        require(it < kMaxBisection, ErrorCode::OracleFailure,
                std::string(who) + ": bisection did not terminate in 200 iterations");
    }
    out.gamma = hi;
    const double d = m.dual(hi), p = m.primal(hi);
    out.delta = d > 0.0 ? std::min(1.0, p / d) : 1.0;
    return out;
}

inline void check_oracle_inputs(const Matrix& gamma, const Matrix& sigma_hat, const Matrix& sigma_ref, double delta,
                                const char* who) {
    check_square_finite(sigma_hat, who);
    check_square_finite(sigma_ref, who);
    require(gamma.rows() == sigma_hat.rows() && sigma_ref.rows() == sigma_hat.rows(), ErrorCode::InvalidInput,
            std::string(who) + ": dimension mismatch");
    require(delta > 0.0 && delta < 1.0, ErrorCode::InvalidInput, std::string(who) + ": delta must lie in (0, 1)");
}

/// Gelbrich ball: Sigma* = g^2 (gI - Gamma)^-1 Sigma_hat (gI - Gamma)^-1.
inline OracleResult wasserstein_oracle(const Matrix& gamma_in, const Matrix& sigma_hat, double rho,
                                       const Matrix& sigma_ref, double lambda_floor = 0.0, double delta = 0.95) {
    check_oracle_inputs(gamma_in, sigma_hat, sigma_ref, delta, "wasserstein_oracle");
    require(min_eigenvalue(sigma_hat) >= -kPsdClamp, ErrorCode::InvalidNominal,
            "wasserstein_oracle: nominal covariance is not positive semidefinite");
    require(lambda_floor <= min_eigenvalue(sigma_hat) + 1e-12, ErrorCode::InvalidInput,
            "wasserstein_oracle: floor exceeds the nominal's smallest eigenvalue");
    const SymEigen e = clamp_gradient(gamma_in);
    const Index d = sigma_hat.rows();
    const double lam1 = e.values(d - 1);
    if (lam1 <= 0.0 || rho <= 0.0) return nominal_result(sigma_hat);

    const Matrix& U = e.vectors;
    const Vector& lam = e.values;
    const Matrix S = symmetrize(U.transpose() * sigma_hat * U);
    const Vector s = S.diagonal();
    const double ref = frob_inner(U * lam.asDiagonal() * U.transpose(), sigma_ref);
    const double rho2 = rho * rho;

    DualModel m;
    m.slope = [&](double g) {
        double acc = rho2;
        for (Index i = 0; i < d; ++i) acc -= s(i) * lam(i) * lam(i) / ((g - lam(i)) * (g - lam(i)));
        return acc;
    };
    m.dual = [&](double g) {
        double acc = rho2;
        for (Index i = 0; i < d; ++i) acc += s(i) * lam(i) / (g - lam(i));
        return g * acc - ref;
    };
    m.primal = [&](double g) {
        double acc = 0.0;
        for (Index i = 0; i < d; ++i) acc += lam(i) * s(i) / ((g - lam(i)) * (g - lam(i)));
        return g * g * acc - ref;
    };

    // Bounds from the top eigenvector and the total nominal variance.
    const double lo0 = lam1 * (1.0 + std::sqrt(std::max(0.0, s(d - 1))) / rho);
    const double hi0 = lam1 * (1.0 + std::sqrt(std::max(0.0, sigma_hat.trace())) / rho);

    OracleResult r;
    r.active = true;
    double g = hi0;
    if (hi0 - lo0 <= 1e-15 * hi0) {
        r.path.push_back({hi0, m.slope(hi0)});
        const double dv = m.dual(hi0);
        r.subopt_delta_achieved = dv > 0.0 ? std::min(1.0, m.primal(hi0) / dv) : 1.0;
    } else {
        BisectionOutcome b = bisect_dual(m, lo0, hi0, delta, "wasserstein_oracle");
        g = b.gamma;
        r.iterations = b.iterations;
        r.subopt_delta_achieved = b.delta;
        r.path = std::move(b.path);
    }
    Vector dg(d);
    for (Index i = 0; i < d; ++i) dg(i) = g / (g - lam(i));
    r.sigma_star = SymMatrix(U * (dg.asDiagonal() * S * dg.asDiagonal()) * U.transpose());
    r.dual_gamma = g;
    return r;
}

/// KL ball: Sigma* = g (g Sigma_hat^-1 - Gamma)^-1, computed in the eigenbasis
/// of Sigma_hat^1/2 Gamma Sigma_hat^1/2.
inline OracleResult kl_oracle(const Matrix& gamma_in, const Matrix& sigma_hat, double rho, const Matrix& sigma_ref,
                              double lambda_floor = 0.0, double delta = 0.95) {
    check_oracle_inputs(gamma_in, sigma_hat, sigma_ref, delta, "kl_oracle");
    require(is_pd(sigma_hat), ErrorCode::InvalidNominal, "kl_oracle: nominal covariance must be positive definite");
    require(lambda_floor <= min_eigenvalue(sigma_hat) + 1e-12, ErrorCode::InvalidInput,
            "kl_oracle: floor exceeds the nominal's smallest eigenvalue");
    const SymEigen ge = clamp_gradient(gamma_in);
    const Index d = sigma_hat.rows();
    if (ge.values(d - 1) <= 0.0 || rho <= 0.0) return nominal_result(sigma_hat);
    const Matrix gamma = spectral_apply(ge, [](double l) { return l; });

    const Matrix R = sym_sqrt(sigma_hat);
    const SymEigen e = sym_eig(R * gamma * R);
    const Vector lam = e.values.cwiseMax(0.0);
    const Matrix& V = e.vectors;
    const double lam1 = lam(d - 1);
    const double ref = frob_inner(gamma, sigma_ref);
    const double dd = static_cast<double>(d);

    DualModel m;
    m.slope = [&](double g) {
        double acc = 2.0 * rho;
        for (Index i = 0; i < d; ++i) acc -= std::log1p(-lam(i) / g) + lam(i) / (g - lam(i));
        return acc;
    };
    m.dual = [&](double g) {
        double acc = 2.0 * rho;
        for (Index i = 0; i < d; ++i) acc -= std::log1p(-lam(i) / g);
        return g * acc - ref;
    };
    m.primal = [&](double g) {
        double acc = 0.0;
        for (Index i = 0; i < d; ++i) acc += lam(i) * g / (g - lam(i));
        return acc - ref;
    };

    const double lo0 = lam1;
    const double hi0 = lam1 * (1.0 + dd / rho);
    BisectionOutcome b = bisect_dual(m, lo0, hi0, delta, "kl_oracle");
    const double g = b.gamma;
    Vector dg(d);
    for (Index i = 0; i < d; ++i) dg(i) = g / (g - lam(i));
    OracleResult r;
    r.sigma_star = SymMatrix(R * (V * dg.asDiagonal() * V.transpose()) * R);
    r.dual_gamma = g;
    r.active = true;
    r.iterations = b.iterations;
    r.subopt_delta_achieved = b.delta;
    r.path = std::move(b.path);
    return r;
}

/// Fisher ball. Stationarity Gamma = g (Sigma_hat^-2 - Sigma^-2) gives
/// Sigma(g) = (Sigma_hat^-2 - Gamma / g)^-1/2, defined for
/// g > lambda_max(Sigma_hat Gamma Sigma_hat); F(Sigma(g)) decreases in g.
inline OracleResult fisher_oracle(const Matrix& gamma_in, const Matrix& sigma_hat, double rho, const Matrix& sigma_ref,
                                  double lambda_floor = 0.0, double delta = 0.95) {
    check_oracle_inputs(gamma_in, sigma_hat, sigma_ref, delta, "fisher_oracle");
    require(is_pd(sigma_hat), ErrorCode::InvalidNominal, "fisher_oracle: nominal covariance must be positive definite");
    require(lambda_floor <= min_eigenvalue(sigma_hat) + 1e-12, ErrorCode::InvalidInput,
            "fisher_oracle: floor exceeds the nominal's smallest eigenvalue");
    const SymEigen ge = clamp_gradient(gamma_in);
    const Index d = sigma_hat.rows();
    if (ge.values(d - 1) <= 0.0 || rho <= 0.0) return nominal_result(sigma_hat);
    const Matrix gamma = spectral_apply(ge, [](double l) { return l; });

    const Matrix inv_hat = spd_inverse(sigma_hat, "fisher_oracle");
    const Matrix inv_hat2 = symmetrize(inv_hat * inv_hat);
    const double tr_inv_hat = inv_hat.trace();
    const double ref = frob_inner(gamma, sigma_ref);

    // Sigma(g)^-2 = inv_hat2 - gamma / g; returns eigenpairs of Sigma(g)^-1.
    auto inv_sigma = [&](double g) {
        SymEigen e = sym_eig(inv_hat2 - gamma / g);
        e.values = e.values.cwiseMax(0.0).cwiseSqrt();
        return e;
    };
    auto excess = [&](double g) {  // F(Sigma(g)) - rho
        const SymEigen e = inv_sigma(g);
        if (e.values(0) <= 0.0) return std::numeric_limits<double>::infinity();
        const Matrix sig = spectral_apply(e, [](double l) { return 1.0 / l; });
        return frob_inner(inv_hat2, sig) - 2.0 * tr_inv_hat + e.values.sum() - rho;
    };

    DualModel m;
    m.slope = [&](double g) { return -excess(g); };
    m.dual = [&](double g) {
        const SymEigen e = inv_sigma(g);
        return g * rho + 2.0 * g * tr_inv_hat - 2.0 * g * e.values.sum() - ref;
    };
    m.primal = [&](double g) {
        const SymEigen e = inv_sigma(g);
        return frob_inner(gamma, spectral_apply(e, [](double l) { return 1.0 / l; })) - ref;
    };

    const double lo0 = max_eigenvalue(sigma_hat * gamma * sigma_hat);
    double lo = lo0, hi = 2.0 * lo0;
    int doublings = 0;
    while (!(excess(hi) < 0.0)) {
        require(++doublings <= 60, ErrorCode::OracleFailure, "fisher_oracle: no bracket within 60 doublings");
        lo = hi;
        hi *= 2.0;
    }
    BisectionOutcome b = bisect_dual(m, lo, hi, delta, "fisher_oracle");
    const double g = b.gamma;
    OracleResult r;
    r.sigma_star = SymMatrix(spectral_apply(inv_sigma(g), [](double l) { return 1.0 / l; }));
    r.dual_gamma = g;
    r.active = true;
    r.iterations = b.iterations;
    r.subopt_delta_achieved = b.delta;
    r.path = std::move(b.path);
    return r;
}

// ---------------------------------------------------------------------------
// Brute force over commuting instances

/// Per-coordinate divergence budget in a common eigenbasis, and the largest
/// variance reachable with a given budget.
inline double coordinate_sigma(DivergenceKind kind, double s_hat, double budget) {
    budget = std::max(0.0, budget);
    switch (kind) {
        case DivergenceKind::Wasserstein2: {
            const double r = std::sqrt(s_hat) + std::sqrt(budget);
            return r * r;
        }
        case DivergenceKind::Fisher: {
            const double b = 2.0 / s_hat + budget;
            return s_hat * s_hat * 0.5 * (b + std::sqrt(std::max(0.0, b * b - 4.0 / (s_hat * s_hat))));
        }
        case DivergenceKind::KullbackLeibler: {
            // 0.5 (x - 1 - log x) = budget for x = sigma / s_hat >= 1.
            auto c = [](double x) { return 0.5 * (x - 1.0 - std::log(x)); };
            double lo = 1.0, hi = 2.0;
            while (c(hi) < budget) hi *= 2.0;
            for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
                const double mid = 0.5 * (lo + hi);
                (c(mid) < budget ? lo : hi) = mid;
            }
            return s_hat * lo;
        }
        default: fail(ErrorCode::Unsupported, "brute_force_oracle: unsupported divergence");
    }
}

/// Exhaustive search over budget splits between eigen-coordinates, refined
/// around the incumbent until the grid step reaches `grid_resolution`.
inline OracleResult brute_force_oracle(const Matrix& gamma_in, const AmbiguityBall& ball,
                                       double grid_resolution = 1e-3) {
    const Matrix sigma_hat = ball.nominal_covariance();
    const Index d = sigma_hat.rows();
    require(d <= 3, ErrorCode::Unsupported, "brute_force_oracle: dimension above 3");
    require(ball.kind == DivergenceKind::Wasserstein2 || ball.kind == DivergenceKind::KullbackLeibler ||
                ball.kind == DivergenceKind::Fisher,
            ErrorCode::Unsupported, "brute_force_oracle: unsupported divergence");
    require(grid_resolution > 0.0 && grid_resolution < 1.0, ErrorCode::InvalidInput,
            "brute_force_oracle: resolution must lie in (0, 1)");
    const Matrix gamma = symmetrize(gamma_in);
    const double scale = 1.0 + gamma.norm() + sigma_hat.norm();
    require((gamma * sigma_hat - sigma_hat * gamma).norm() <= 1e-9 * scale * scale, ErrorCode::Unsupported,
            "brute_force_oracle: gradient and nominal do not commute");
    if (gamma.norm() == 0.0 || ball.radius <= 0.0) return nominal_result(sigma_hat);

    const SymEigen e = sym_eig(sigma_hat + 0.5772156649 * gamma);
    const Matrix& U = e.vectors;
    Vector s(d), g(d);
    for (Index i = 0; i < d; ++i) {
        s(i) = U.col(i).dot(sigma_hat * U.col(i));
        g(i) = std::max(0.0, U.col(i).dot(gamma * U.col(i)));
    }
    const double budget = ball.kind == DivergenceKind::Wasserstein2 ? ball.radius * ball.radius : ball.radius;

    auto value = [&](const Vector& frac) {
        double v = 0.0;
        for (Index i = 0; i < d; ++i) v += g(i) * coordinate_sigma(ball.kind, s(i), frac(i) * budget);
        return v;
    };
    auto to_frac = [&](const Vector& head) {
        Vector f(d);
        f.head(d - 1) = head;
        f(d - 1) = 1.0 - head.sum();
        return f;
    };

    Vector best_head = Vector::Constant(d - 1, 1.0 / static_cast<double>(d));
    double best = value(to_frac(best_head));
    double step = 0.02;
    Vector center = best_head;
    double half = 0.5;
    while (true) {
        const int n_per = static_cast<int>(std::ceil(2.0 * half / step)) + 1;
        std::vector<int> idx(static_cast<size_t>(d - 1), 0);
        const Index k = d - 1;
        long total = 1;
        for (Index i = 0; i < k; ++i) total *= n_per;
        for (long flat = 0; flat < total; ++flat) {
            long rem = flat;
            Vector head(k);
            bool ok = true;
            for (Index i = 0; i < k; ++i) {
                const int j = static_cast<int>(rem % n_per);
                rem /= n_per;
                head(i) = center(i) - half + j * step;
                if (head(i) < 0.0 || head(i) > 1.0) ok = false;
            }
            if (!ok || head.sum() > 1.0) continue;
            const double v = value(to_frac(head));
            if (v > best) {
                best = v;
                best_head = head;
            }
        }
        if (step <= grid_resolution || k == 0) break;
        center = best_head;
        half = 2.0 * step;
        step = std::max(grid_resolution, step / 5.0);
    }

    const Vector frac = to_frac(best_head);
    Vector sig(d);
    for (Index i = 0; i < d; ++i) sig(i) = coordinate_sigma(ball.kind, s(i), frac(i) * budget);
    OracleResult r;
    r.sigma_star = SymMatrix(U * sig.asDiagonal() * U.transpose());
    r.active = true;
    require(membership(ball, MomentPair::centered(r.sigma_star), 1e-9), ErrorCode::OracleFailure,
            "brute_force_oracle: incumbent is infeasible");
    return r;
}

// ---------------------------------------------------------------------------

/// Oracle for one noise term of a zero-mean ball.
inline OracleResult linearization_oracle(const AmbiguityBall& ball, const Matrix& gamma, const Matrix& sigma_ref,
                                         double lambda_floor, double delta) {
    const Matrix sigma_hat = ball.nominal_covariance();
    switch (ball.kind) {
        case DivergenceKind::Wasserstein2:
            return wasserstein_oracle(gamma, sigma_hat, ball.radius, sigma_ref, lambda_floor, delta);
        case DivergenceKind::KullbackLeibler:
            return kl_oracle(gamma, sigma_hat, ball.radius, sigma_ref, lambda_floor, delta);
        case DivergenceKind::Fisher:
            return fisher_oracle(gamma, sigma_hat, ball.radius, sigma_ref, lambda_floor, delta);
        case DivergenceKind::MomentCustom: {
            auto div = CustomDivergenceRegistry::instance().get(ball.custom_handle);
            require(div != nullptr, ErrorCode::Unsupported, "oracle: unregistered custom divergence");
            clamp_gradient(gamma);
            OracleResult r;
            r.sigma_star = SymMatrix(div->linearize(gamma, ball.nominal, ball.radius));
            r.active = ball.radius > 0.0;
            return r;
        }
        case DivergenceKind::EntropicOT:
            fail(ErrorCode::Unsupported, "oracle: no linearization oracle for the entropic divergence");
    }
    fail(ErrorCode::Unsupported, "oracle: unknown divergence");
}

}  // namespace drlqg
