#pragma once

// Divergences between Gaussian moment pairs and ambiguity-ball membership.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "drlqg/matops.hpp"
#include "drlqg/rng.hpp"

namespace drlqg {

/// First and second moments (mu, M); the covariance is M - mu mu'.
struct MomentPair {
    Vector mean;
    Matrix second_moment;

    static MomentPair from_covariance(const Vector& mu, const Matrix& sigma) {
        return {mu, symmetrize(sigma + mu * mu.transpose())};
    }
    static MomentPair centered(const Matrix& sigma) { return from_covariance(Vector::Zero(sigma.rows()), sigma); }

    Index dim() const { return mean.size(); }
    Matrix covariance() const { return symmetrize(second_moment - mean * mean.transpose()); }

    void validate() const {
        require(second_moment.rows() == mean.size() && second_moment.cols() == mean.size(), ErrorCode::InvalidInput,
                "MomentPair: dimension mismatch");
        require(mean.allFinite() && second_moment.allFinite(), ErrorCode::InvalidInput, "MomentPair: non-finite entries");
        require(min_eigenvalue(covariance()) >= -kPsdClamp, ErrorCode::InvalidInput,
                "MomentPair: M - mu mu' is not positive semidefinite");
    }
};

enum class DivergenceKind { Wasserstein2, KullbackLeibler, EntropicOT, Fisher, MomentCustom };

inline const char* to_string(DivergenceKind k) {
    switch (k) {
        case DivergenceKind::Wasserstein2: return "wasserstein";
        case DivergenceKind::KullbackLeibler: return "kl";
        case DivergenceKind::EntropicOT: return "entropic-ot";
        case DivergenceKind::Fisher: return "fisher";
        case DivergenceKind::MomentCustom: return "custom";
    }
    return "unknown";
}

inline DivergenceKind parse_divergence(const std::string& s) {
    if (s == "wasserstein" || s == "w2" || s == "wasserstein2") return DivergenceKind::Wasserstein2;
    if (s == "kl" || s == "kullback-leibler") return DivergenceKind::KullbackLeibler;
    if (s == "fisher") return DivergenceKind::Fisher;
    if (s == "entropic-ot" || s == "entropic_ot") return DivergenceKind::EntropicOT;
    fail(ErrorCode::InvalidInput, "unknown divergence '" + s + "'");
}

/// Divergence value with an explicit infinity flag; value is meaningless
/// when infinite is set.
struct DivergenceValue {
    double value = 0.0;
    bool infinite = false;

    static DivergenceValue inf() { return {0.0, true}; }
    bool at_most(double bound) const { return !infinite && value <= bound; }
};

inline void check_same_dim(const MomentPair& a, const MomentPair& b, const char* who) {
    a.validate();
    b.validate();
    require(a.dim() == b.dim(), ErrorCode::InvalidInput, std::string(who) + ": dimension mismatch");
}

inline bool is_pd(const Matrix& s) {
    if (s.size() == 0) return true;
    Eigen::LLT<Matrix> llt(symmetrize(s));
    return llt.info() == Eigen::Success && min_eigenvalue(s) > 0.0;
}

inline double gelbrich(const MomentPair& a, const MomentPair& b) {
    check_same_dim(a, b, "gelbrich");
    const Matrix sa = a.covariance(), sb = b.covariance();
    const Matrix rb = sym_sqrt(sb);
    const Matrix cross = sym_sqrt(rb * sa * rb);
    const double scale = sa.trace() + sb.trace();
    double cov_part = scale - 2.0 * cross.trace();
    // Cancellation noise; without this sqrt lifts 1e-16 roundoff to 1e-8.
    if (cov_part <= 1e-14 * scale) cov_part = 0.0;
    return std::sqrt((a.mean - b.mean).squaredNorm() + cov_part);
}

/// KL divergence of N(a) from N(b).
inline DivergenceValue kl_t_divergence(const MomentPair& a, const MomentPair& b) {
    check_same_dim(a, b, "kl_t_divergence");
    const Matrix sb = b.covariance();
    require(is_pd(sb), ErrorCode::InvalidNominal, "kl_t_divergence: reference covariance is singular");
    const Matrix sa = a.covariance();
    if (!is_pd(sa)) return DivergenceValue::inf();
    Eigen::LLT<Matrix> lb(sb);
    const Vector dm = a.mean - b.mean;
    const double quad = dm.dot(lb.solve(dm));
    const double tr = lb.solve(sa).trace();
    const double ld = spd_logdet(sa, "kl_t_divergence") - spd_logdet(sb, "kl_t_divergence");
    return {0.5 * (quad + tr - ld - static_cast<double>(a.dim())), false};
}

/// Radicand of the entropy-regularized Bures-Wasserstein distance. It is not
/// sign-definite: for small covariances the entropic correction dominates.
inline double entropic_ot_squared(const MomentPair& a, const MomentPair& b, double eps) {
    check_same_dim(a, b, "entropic_ot");
    require(eps > 0.0 && std::isfinite(eps), ErrorCode::InvalidInput, "entropic_ot: epsilon must be positive");
    const Matrix sa = a.covariance(), sb = b.covariance();
    require(is_pd(sa) && is_pd(sb), ErrorCode::InvalidInput, "entropic_ot: covariances must be positive definite");
    const Index d = a.dim();
    const double dd = static_cast<double>(d);
    const Matrix rb = sym_sqrt(sb);
    const double q = eps / 4.0;
    const Matrix X = symmetrize(sym_sqrt(rb * sa * rb + q * q * Matrix::Identity(d, d)).matrix() -
                                q * Matrix::Identity(d, d));
    const double logdet_x = spd_logdet(X, "entropic_ot");
    const double log_term = 2.0 * dd * std::log(2.0 * M_PI * M_E) + dd * std::log(eps / 2.0) + logdet_x;
    return (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * X.trace() - 0.5 * eps * log_term;
}

inline double entropic_ot(const MomentPair& a, const MomentPair& b, double eps) {
    const double r = entropic_ot_squared(a, b, eps);
    require(r >= 0.0, ErrorCode::Numeric, "entropic_ot: radicand is negative (" + std::to_string(r) + ")");
    return std::sqrt(r);
}

inline double fisher_gaussian(const MomentPair& a, const MomentPair& b) {
    check_same_dim(a, b, "fisher_gaussian");
    const Matrix sa = a.covariance(), sb = b.covariance();
    require(is_pd(sa) && is_pd(sb), ErrorCode::InvalidInput, "fisher_gaussian: singular covariance");
    const Matrix ib = spd_inverse(sb, "fisher_gaussian");
    const Matrix ia = spd_inverse(sa, "fisher_gaussian");
    const Vector shift = ib * (a.mean - b.mean);
    return shift.squaredNorm() + (ib * ib * sa - 2.0 * ib + ia).trace();
}

// ---------------------------------------------------------------------------
// Custom moment divergences

/// A user-supplied divergence on moment pairs. `linearize` must return a
/// maximizer of <Gamma, Sigma> over {Sigma : evaluate((0, Sigma), nominal) <= rho}.
struct CustomDivergence {
    std::string name;
    std::function<double(const MomentPair& candidate, const MomentPair& nominal)> evaluate;
    std::function<Matrix(const Matrix& gamma, const MomentPair& nominal, double rho)> linearize;
};

class CustomDivergenceRegistry {
public:
    static CustomDivergenceRegistry& instance() {
        static CustomDivergenceRegistry reg;
        return reg;
    }

    int add(CustomDivergence div) {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.push_back(std::make_shared<const CustomDivergence>(std::move(div)));
        return static_cast<int>(entries_.size()) - 1;
    }

    std::shared_ptr<const CustomDivergence> get(int handle) const {
        std::lock_guard<std::mutex> lock(mu_);
        if (handle < 0 || handle >= static_cast<int>(entries_.size())) return nullptr;
        return entries_[handle];
    }

private:
    mutable std::mutex mu_;
    std::vector<std::shared_ptr<const CustomDivergence>> entries_;
};

inline Matrix random_spd(Philox4x32& rng, Index d, double lo = 0.5, double hi = 2.0) {
    Matrix g(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix u = qr.householderQ();
    Vector lam(d);
    for (Index i = 0; i < d; ++i) lam(i) = rng.uniform(lo, hi);
    return symmetrize(u * lam.asDiagonal() * u.transpose());
}

/// Registers a custom divergence after randomized property gates on
/// dimension `dim`: nonnegativity with zero at the nominal, the zero-mean
/// property, convex sublevel sets, monotone growth along psd directions, and
/// feasibility of the linearization callback. Returns an integer handle.
inline int register_custom_divergence(const CustomDivergence& div, Index dim = 2, std::uint64_t seed = 7,
                                      int trials = 32) {
    require(static_cast<bool>(div.evaluate) && static_cast<bool>(div.linearize), ErrorCode::InvalidInput,
            "register_custom_divergence: both callbacks are required");
    Philox4x32 rng(seed, 0xC057);
    const double tol = 1e-8;
    auto random_vec = [&](Index d) {
        Vector v(d);
        for (Index i = 0; i < d; ++i) v(i) = rng.normal();
        return v;
    };
    for (int k = 0; k < trials; ++k) {
        const MomentPair nominal = MomentPair::centered(random_spd(rng, dim));
        const double at_nominal = div.evaluate(nominal, nominal);
        require(std::abs(at_nominal) <= tol, ErrorCode::InvalidInput,
                "register_custom_divergence: divergence does not vanish at the nominal");
        const MomentPair a = MomentPair::from_covariance(random_vec(dim), random_spd(rng, dim));
        const MomentPair b = MomentPair::from_covariance(random_vec(dim), random_spd(rng, dim));
        const double da = div.evaluate(a, nominal), db = div.evaluate(b, nominal);
        require(da >= -tol && db >= -tol, ErrorCode::InvalidInput, "register_custom_divergence: negative value");
        const double dz = div.evaluate(MomentPair{Vector::Zero(dim), a.second_moment}, nominal);
        require(dz <= da + tol * (1.0 + std::abs(da)), ErrorCode::InvalidInput,
                "register_custom_divergence: zeroing the mean increases the divergence");
        for (double lam : {0.25, 0.5, 0.75}) {
            const MomentPair mix{lam * a.mean + (1.0 - lam) * b.mean,
                                 lam * a.second_moment + (1.0 - lam) * b.second_moment};
            require(div.evaluate(mix, nominal) <= std::max(da, db) + tol * (1.0 + std::max(da, db)),
                    ErrorCode::InvalidInput, "register_custom_divergence: sublevel sets are not convex");
        }
        const Matrix dir = random_spd(rng, dim, 0.1, 1.0);
        double prev = at_nominal;
        for (double t : {0.5, 1.0, 2.0}) {
            const double v = div.evaluate(MomentPair::centered(nominal.second_moment + t * dir), nominal);
            require(v >= prev - tol, ErrorCode::InvalidInput,
                    "register_custom_divergence: divergence decreases along a psd direction");
            prev = v;
        }
        const double rho = 0.1 + rng.uniform();
        const Matrix target = div.linearize(random_spd(rng, dim), nominal, rho);
        require(target.rows() == dim && target.cols() == dim && target.allFinite(), ErrorCode::InvalidInput,
                "register_custom_divergence: linearization returned a malformed matrix");
        require(div.evaluate(MomentPair::centered(target), nominal) <= rho + 1e-6, ErrorCode::InvalidInput,
                "register_custom_divergence: linearization returned an infeasible point");
    }
    return CustomDivergenceRegistry::instance().add(div);
}

// ---------------------------------------------------------------------------
// Ambiguity balls

struct AmbiguityBall {
    DivergenceKind kind = DivergenceKind::Wasserstein2;
    MomentPair nominal;
    double radius = 0.0;
    double epsilon = 0.0;   // EntropicOT only
    int custom_handle = -1; // MomentCustom only
    double min_radius = 0.0;

    Matrix nominal_covariance() const { return nominal.covariance(); }
};

/// Signed square root, used to put the entropic radicand on the radius scale.
inline double signed_sqrt(double x) { return x >= 0.0 ? std::sqrt(x) : -std::sqrt(-x); }

inline AmbiguityBall make_ball(DivergenceKind kind, const MomentPair& nominal, double radius, double epsilon = 0.0,
                               int custom_handle = -1) {
    nominal.validate();
    require(std::isfinite(radius) && radius >= 0.0, ErrorCode::InvalidInput, "AmbiguityBall: radius must be >= 0");
    AmbiguityBall ball{kind, nominal, radius, epsilon, custom_handle, 0.0};
    const Matrix sig = nominal.covariance();
    switch (kind) {
        case DivergenceKind::Wasserstein2: break;
        case DivergenceKind::KullbackLeibler:
        case DivergenceKind::Fisher:
            require(is_pd(sig), ErrorCode::InvalidNominal, "AmbiguityBall: nominal covariance must be positive definite");
            break;
        case DivergenceKind::EntropicOT: {
            require(epsilon > 0.0, ErrorCode::InvalidInput, "AmbiguityBall: entropic regularization must be positive");
            require(is_pd(sig), ErrorCode::InvalidNominal, "AmbiguityBall: nominal covariance must be positive definite");
            const Index d = sig.rows();
            const MomentPair inflated =
                MomentPair::from_covariance(nominal.mean, sig + 0.5 * epsilon * Matrix::Identity(d, d));
            ball.min_radius = std::max(0.0, signed_sqrt(entropic_ot_squared(inflated, nominal, epsilon)));
            require(radius >= ball.min_radius, ErrorCode::InvalidInput,
                    "AmbiguityBall: radius " + std::to_string(radius) + " is below the minimum " +
                        std::to_string(ball.min_radius) + " for a nonempty entropic ball");
            break;
        }
        case DivergenceKind::MomentCustom:
            require(CustomDivergenceRegistry::instance().get(custom_handle) != nullptr, ErrorCode::Unsupported,
                    "AmbiguityBall: no custom divergence registered under handle " + std::to_string(custom_handle));
            break;
    }
    return ball;
}

/// Divergence of the Gaussian with the candidate moments from the nominal, on
/// the scale the radius is measured in (entropic values are signed roots).
inline DivergenceValue divergence(const AmbiguityBall& ball, const MomentPair& cand) {
    check_same_dim(cand, ball.nominal, "divergence");
    switch (ball.kind) {
        case DivergenceKind::Wasserstein2: return {gelbrich(cand, ball.nominal), false};
        case DivergenceKind::KullbackLeibler: return kl_t_divergence(cand, ball.nominal);
        case DivergenceKind::Fisher:
            if (!is_pd(cand.covariance())) return DivergenceValue::inf();
            return {fisher_gaussian(cand, ball.nominal), false};
        case DivergenceKind::EntropicOT:
            if (!is_pd(cand.covariance())) return DivergenceValue::inf();
            return {signed_sqrt(entropic_ot_squared(cand, ball.nominal, ball.epsilon)), false};
        case DivergenceKind::MomentCustom: {
            auto div = CustomDivergenceRegistry::instance().get(ball.custom_handle);
            require(div != nullptr, ErrorCode::Unsupported,
                    "divergence: no custom divergence registered under handle " + std::to_string(ball.custom_handle));
            const double v = div->evaluate(cand, ball.nominal);
            if (!std::isfinite(v)) return DivergenceValue::inf();
            return {v, false};
        }
    }
    fail(ErrorCode::Unsupported, "divergence: unknown kind");
}

inline bool membership(const AmbiguityBall& ball, const MomentPair& cand, double tol) {
    return divergence(ball, cand).at_most(ball.radius + tol);
}

/// For a zero-mean nominal: whether membership of (mu, M) implies membership
/// of (0, M) for this candidate.
inline bool zero_mean_feasibility_check(const AmbiguityBall& ball, const MomentPair& cand, double tol = 1e-10) {
    require(ball.nominal.mean.isZero(0.0), ErrorCode::InvalidInput,
            "zero_mean_feasibility_check: nominal mean must be zero");
    if (!membership(ball, cand, tol)) return true;
    return membership(ball, MomentPair{Vector::Zero(cand.dim()), cand.second_moment}, tol);
}

}  // namespace drlqg
