#pragma once

// Frank-Wolfe over the product of per-noise-term covariance balls.

#include <algorithm>
#include <chrono>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "drlqg/grad.hpp"
#include "drlqg/io.hpp"
#include "drlqg/oracles.hpp"

namespace drlqg {

/// One zero-mean ball per noise term, ordered x0, w_0..w_{T-1}, v_0..v_{T-1}.
struct NominalModel {
    std::vector<AmbiguityBall> balls;

    int horizon() const { return (static_cast<int>(balls.size()) - 1) / 2; }

    CovarianceProfile nominal_profile() const {
        const int T = horizon();
        CovarianceProfile c;
        c.W.resize(T);
        c.V.resize(T);
        for (int z = 0; z < static_cast<int>(balls.size()); ++z) c.block(z) = balls[z].nominal_covariance();
        return c;
    }

    /// Same divergence and radius for every noise term.
    static NominalModel uniform(DivergenceKind kind, const CovarianceProfile& nominal, double radius,
                                double epsilon = 0.0, int custom_handle = -1) {
        NominalModel m;
        for (int z = 0; z < nominal.blocks(); ++z)
            m.balls.push_back(make_ball(kind, MomentPair::centered(nominal.block(z)), radius, epsilon, custom_handle));
        return m;
    }

    void validate(const SystemInstance& sys) const {
        require(static_cast<int>(balls.size()) == 2 * sys.T + 1, ErrorCode::InvalidInput,
                "NominalModel: expected 2T + 1 balls");
        for (int z = 0; z < static_cast<int>(balls.size()); ++z) {
            const Index want = z > sys.T ? sys.p() : sys.n();
            require(balls[z].nominal.dim() == want, ErrorCode::InvalidInput,
                    "NominalModel: ball " + std::to_string(z) + " has the wrong dimension");
            require(balls[z].nominal.mean.isZero(0.0), ErrorCode::InvalidInput,
                    "NominalModel: ball " + std::to_string(z) + " has a nonzero nominal mean");
        }
    }
};

inline std::string noise_term_name(int z, int T) {
    if (z == 0) return "x0";
    if (z <= T) return "w_" + std::to_string(z - 1);
    return "v_" + std::to_string(z - 1 - T);
}

enum class StepRule { Vanishing, LineSearchBacktracking };

struct FwConfig {
    int max_iters = 500;
    double gap_tol = 1e-3;
    double oracle_delta = 0.95;
    StepRule step_rule = StepRule::Vanishing;
    bool parallel_oracles = true;
    std::uint64_t seed = 0;

    void validate() const {
        require(max_iters >= 1, ErrorCode::InvalidInput, "FwConfig: max_iters must be positive");
        require(gap_tol > 0.0, ErrorCode::InvalidInput, "FwConfig: gap_tol must be positive");
        require(oracle_delta > 0.0 && oracle_delta < 1.0, ErrorCode::InvalidInput,
                "FwConfig: oracle_delta must lie in (0, 1)");
    }
};

struct FwRecord {
    int iter = 0;
    double objective = 0.0;
    double fw_gap = 0.0;
    double rel_gap = 0.0;
    double step = 0.0;
    double wall_ms = 0.0;
};

struct FwTrace {
    std::vector<FwRecord> records;
    CovarianceProfile final_profile;
    bool converged = false;
};

struct GapResult {
    double gap = 0.0;
    double value = 0.0;
    CovarianceProfile targets;
    GradientProfile grad;
};

/// Runs fn(z) for z in [0, count); exceptions are rethrown for the lowest z.
template <typename Fn>
void for_each_term(int count, bool parallel, Fn&& fn) {
    std::vector<std::exception_ptr> errors(static_cast<size_t>(count));
    auto run = [&](int z) {
        try {
            fn(z);
        } catch (...) {
            errors[static_cast<size_t>(z)] = std::current_exception();
        }
    };
    const int workers = parallel ? std::min<int>(count, std::max(1u, std::thread::hardware_concurrency())) : 1;
    if (workers <= 1) {
        for (int z = 0; z < count; ++z) run(z);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int z = w; z < count; z += workers) run(z);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Floor on observation-noise blocks: smallest eigenvalue of the nominal.
inline double oracle_floor(const NominalModel& model, int z, int T) {
    return z > T ? min_eigenvalue(model.balls[z].nominal_covariance()) : 0.0;
}

/// Frank-Wolfe surrogate gap at `current` with the per-term oracle targets.
inline GapResult fw_gap(const SystemInstance& sys, const NominalModel& model, const CovarianceProfile& current,
                        double delta = 0.95, bool parallel = false) {
    model.validate(sys);
    ValueAndGradient vg = lqg_gradient(sys, current);
    GapResult out;
    out.value = vg.value;
    out.grad = std::move(vg.grad);
    out.targets = current;
    const int T = sys.T;
    const int count = current.blocks();
    std::vector<double> parts(static_cast<size_t>(count), 0.0);
    for_each_term(count, parallel, [&](int z) {
        try {
            const OracleResult r = linearization_oracle(model.balls[z], out.grad.block(z), current.block(z),
                                                        oracle_floor(model, z, T), delta);
            out.targets.block(z) = r.sigma_star.matrix();
            parts[static_cast<size_t>(z)] = frob_inner(out.grad.block(z), r.sigma_star.matrix() - current.block(z));
        } catch (const SolverError& e) {
            throw SolverError(e.code(), "noise term " + noise_term_name(z, T) + " (z=" + std::to_string(z) +
                                            "): " + e.what());
        }
    });
    for (double p : parts) out.gap += p;  // fixed order keeps runs bit-reproducible
    return out;
}

inline void check_feasible_init(const SystemInstance& sys, const NominalModel& model, const CovarianceProfile& init) {
    try {
        init.validate(sys);
    } catch (const SolverError& e) {
        fail(ErrorCode::InvalidInit, e.what());
    }
    for (int z = 0; z < init.blocks(); ++z) {
        bool ok = false;
        try {
            ok = membership(model.balls[z], MomentPair::centered(init.block(z)), 1e-8);
        } catch (const SolverError&) {
            ok = false;
        }
        require(ok, ErrorCode::InvalidInit, "initial covariance for " + noise_term_name(z, sys.T) + " is infeasible");
        if (z > sys.T)
            require(min_eigenvalue(init.block(z)) >= 1e-10, ErrorCode::InvalidInit,
                    "initial covariance for " + noise_term_name(z, sys.T) + " is not positive definite");
    }
}

struct FwResult {
    CovarianceProfile worst_case;
    FwTrace trace;
};

inline FwResult solve(const SystemInstance& sys, const NominalModel& model, const CovarianceProfile& init,
                      const FwConfig& cfg) {
    sys.validate();
    cfg.validate();
    model.validate(sys);
    check_feasible_init(sys, model, init);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    FwResult res;
    CovarianceProfile x = init;
    double lipschitz = -1.0;  // adaptive curvature estimate for backtracking
    for (int k = 0; k < cfg.max_iters; ++k) {
        GapResult g = fw_gap(sys, model, x, cfg.oracle_delta, cfg.parallel_oracles);
        FwRecord rec;
        rec.iter = k;
        rec.objective = g.value;
        rec.fw_gap = g.gap;
        rec.rel_gap = g.gap / std::max(1e-300, std::abs(g.value));
        if (g.gap <= cfg.gap_tol) {
            rec.step = 0.0;
            rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            res.trace.records.push_back(rec);
            res.trace.converged = true;
            break;
        }
        double alpha = 2.0 / (2.0 + k);
        CovarianceProfile next;
        if (cfg.step_rule == StepRule::Vanishing) {
            next = x.combine(alpha, g.targets);
        } else {
            // Backtracking on the quadratic lower model of a concave, smooth f:
            // accept when f(x + a d) >= f(x) + a gap - L a^2 |d|^2 / 2.
            const double dnorm2 = std::pow(x.distance(g.targets), 2);
            if (lipschitz <= 0.0) {
                const double eps = 1e-4;
                const ValueAndGradient probe = lqg_gradient(sys, x.combine(eps, g.targets));
                double dg = 0.0;
                for (int z = 0; z < x.blocks(); ++z) {
                    const Matrix diff = probe.grad.block(z) - g.grad.block(z);
                    dg += diff.squaredNorm();
                }
                lipschitz = std::max(1e-12, std::sqrt(dg) / (eps * std::sqrt(std::max(dnorm2, 1e-300))));
            }
            lipschitz *= 0.9;
            for (int tries = 0;; ++tries) {
                alpha = std::min(1.0, g.gap / (lipschitz * std::max(dnorm2, 1e-300)));
                next = x.combine(alpha, g.targets);
                const double fn = lqg_value(sys, next).cost;
                if (fn >= g.value + alpha * g.gap - 0.5 * lipschitz * alpha * alpha * dnorm2 || tries >= 60) break;
                lipschitz *= 2.0;
            }
        }
        rec.step = alpha;
        rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        res.trace.records.push_back(rec);
        x = std::move(next);
    }
    res.worst_case = x;
    res.trace.final_profile = x;
    return res;
}

inline FwResult solve(const SystemInstance& sys, const NominalModel& model, const FwConfig& cfg) {
    return solve(sys, model, model.nominal_profile(), cfg);
}

inline CsvTable trace_table(const FwTrace& trace) {
    CsvTable t;
    t.header = {"iter", "objective", "fw_gap", "step", "wall_ms"};
    for (const auto& r : trace.records)
        t.rows.push_back({std::to_string(r.iter), format_double(r.objective), format_double(r.fw_gap),
                          format_double(r.step), format_double(r.wall_ms)});
    return t;
}

}  // namespace drlqg
