#pragma once

// Random instance family and the experiment drivers behind the CLI.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "drlqg/frank_wolfe.hpp"
#include "drlqg/io.hpp"
#include "drlqg/stacked.hpp"

namespace drlqg {

inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr int kConfigSchema = 1;

struct GeneratedInstance {
    SystemInstance sys;
    CovarianceProfile nominal;
};

/// Orthogonal factor of the QR decomposition of a standard Gaussian matrix,
/// with column signs fixed so that R has a positive diagonal.
inline Matrix random_orthogonal(Philox4x32& rng, Index d) {
    Matrix g(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < d; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

/// A: 0.1 on the diagonal and superdiagonal; B = C = Q = R = I; nominal
/// covariances U diag(lambda) U' with lambda uniform on [1, 2]. Noise terms
/// are drawn in the order x0, w_0..w_{T-1}, v_0..v_{T-1}.
inline GeneratedInstance generate_instance(int d, int T, std::uint64_t seed) {
    require(d >= 1 && T >= 1, ErrorCode::InvalidInput, "generate_instance: d and T must be positive");
    Matrix A = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        A(i, i) = 0.1;
        if (i + 1 < d) A(i, i + 1) = 0.1;
    }
    const Matrix I = Matrix::Identity(d, d);
    GeneratedInstance out;
    out.sys = SystemInstance::time_invariant(A, I, I, I, I, T);
    Philox4x32 rng(seed);
    out.nominal.W.resize(T);
    out.nominal.V.resize(T);
    for (int z = 0; z < 2 * T + 1; ++z) {
        const Matrix U = random_orthogonal(rng, d);
        Vector lam(d);
        for (int i = 0; i < d; ++i) lam(i) = rng.uniform(1.0, 2.0);
        out.nominal.block(z) = symmetrize(U * lam.asDiagonal() * U.transpose());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class ExperimentKind { Convergence, Runtime, Gaps, InfiniteHorizon, SingleSolve };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Convergence: return "convergence";
        case ExperimentKind::Runtime: return "runtime";
        case ExperimentKind::Gaps: return "gaps";
        case ExperimentKind::InfiniteHorizon: return "stationary";
        case ExperimentKind::SingleSolve: return "solve";
    }
    return "unknown";
}

inline ExperimentKind parse_experiment(const std::string& s) {
    if (s == "convergence") return ExperimentKind::Convergence;
    if (s == "runtime") return ExperimentKind::Runtime;
    if (s == "gaps") return ExperimentKind::Gaps;
    if (s == "stationary" || s == "infinite-horizon") return ExperimentKind::InfiniteHorizon;
    if (s == "solve") return ExperimentKind::SingleSolve;
    fail(ErrorCode::InvalidInput, "unknown experiment '" + s + "'");
}

inline const char* to_string(StepRule r) {
    return r == StepRule::Vanishing ? "vanishing" : "line-search";
}

inline StepRule parse_step_rule(const std::string& s) {
    if (s == "vanishing") return StepRule::Vanishing;
    if (s == "line-search" || s == "linesearch") return StepRule::LineSearchBacktracking;
    fail(ErrorCode::InvalidInput, "unknown step rule '" + s + "'");
}

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::SingleSolve;
    int d = 2;
    int T = 2;
    std::vector<int> horizons;  // convergence / runtime sweeps; empty means {T}
    DivergenceKind divergence = DivergenceKind::Wasserstein2;
    std::vector<double> rho{0.1};
    std::vector<std::uint64_t> seeds{0};
    FwConfig fw;
    std::string output_dir = "out";
    int jobs = 1;

    void validate() const {
        require(d >= 1 && T >= 1, ErrorCode::InvalidInput, "config: d and T must be positive");
        for (int h : horizons) require(h >= 1, ErrorCode::InvalidInput, "config: horizons must be positive");
        require(!rho.empty() && !seeds.empty(), ErrorCode::InvalidInput, "config: rho and seeds must be nonempty");
        for (double r : rho) require(r >= 0.0 && std::isfinite(r), ErrorCode::InvalidInput, "config: rho must be >= 0");
        require(jobs >= 1, ErrorCode::InvalidInput, "config: jobs must be positive");
        fw.validate();
    }

    std::vector<int> horizon_list() const { return horizons.empty() ? std::vector<int>{T} : horizons; }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema"] = kConfigSchema;
    j["experiment"] = to_string(c.experiment);
    j["d"] = c.d;
    j["T"] = c.T;
    j["horizons"] = c.horizons;
    j["divergence"] = to_string(c.divergence);
    j["rho"] = c.rho;
    j["seeds"] = c.seeds;
    j["fw"] = {{"max_iters", c.fw.max_iters},
               {"gap_tol", c.fw.gap_tol},
               {"oracle_delta", c.fw.oracle_delta},
               {"step_rule", to_string(c.fw.step_rule)},
               {"parallel_oracles", c.fw.parallel_oracles},
               {"seed", c.fw.seed}};
    j["output_dir"] = c.output_dir;
    j["jobs"] = c.jobs;
    return j;
}

/// Fields present in `j` override `base`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {}) {
    try {
        if (j.contains("schema"))
            require(j.at("schema").get<int>() == kConfigSchema, ErrorCode::InvalidInput,
                    "config: unsupported schema version");
        if (j.contains("experiment")) base.experiment = parse_experiment(j.at("experiment").get<std::string>());
        if (j.contains("d")) base.d = j.at("d").get<int>();
        if (j.contains("T")) base.T = j.at("T").get<int>();
        if (j.contains("horizons")) base.horizons = j.at("horizons").get<std::vector<int>>();
        if (j.contains("divergence")) base.divergence = parse_divergence(j.at("divergence").get<std::string>());
        if (j.contains("rho")) {
            const auto& r = j.at("rho");
            base.rho = r.is_array() ? r.get<std::vector<double>>() : std::vector<double>{r.get<double>()};
        }
        if (j.contains("seeds")) base.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("output_dir")) base.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("jobs")) base.jobs = j.at("jobs").get<int>();
        if (j.contains("fw")) {
            const auto& f = j.at("fw");
            if (f.contains("max_iters")) base.fw.max_iters = f.at("max_iters").get<int>();
            if (f.contains("gap_tol")) base.fw.gap_tol = f.at("gap_tol").get<double>();
            if (f.contains("oracle_delta")) base.fw.oracle_delta = f.at("oracle_delta").get<double>();
            if (f.contains("step_rule")) base.fw.step_rule = parse_step_rule(f.at("step_rule").get<std::string>());
            if (f.contains("parallel_oracles")) base.fw.parallel_oracles = f.at("parallel_oracles").get<bool>();
            if (f.contains("seed")) base.fw.seed = f.at("seed").get<std::uint64_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidInput, std::string("config: ") + e.what());
    }
    base.validate();
    return base;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
    return buf;
}

inline nlohmann::json run_metadata(const ExperimentConfig& c, double wall_seconds) {
    return {{"seeds", c.seeds},
            {"config_hash", config_hash(c)},
            {"library_version", kLibraryVersion},
            {"rng", kRngAlgorithm},
            {"wall_seconds", wall_seconds},
            {"config", to_json(c)}};
}

// ---------------------------------------------------------------------------
// Grid execution

/// Runs task(i) for i in [0, count) on up to `jobs` threads.
template <typename Fn>
void run_grid(size_t count, int jobs, Fn&& task) {
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next++; i < count; i = next++) task(i);
    };
    const int n = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (n == 1) {
        worker();
        return;
    }
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

struct RunFailure {
    std::string context;
    std::string code;
    std::string message;
};

inline RunFailure describe_failure(const std::string& context, const std::exception& e) {
    if (auto se = dynamic_cast<const SolverError*>(&e)) return {context, to_string(se->code()), se->what()};
    return {context, "internal", e.what()};
}

// ---------------------------------------------------------------------------
// Worst-case cost of a fixed linear policy

/// The cost of a fixed linear policy is linear in the noise covariances, so
/// one oracle pass per noise term gives the adversary's best response.
inline double fixed_policy_worst_case(const StackedSystem& ss, const Matrix& U, const NominalModel& model,
                                      double delta, CovarianceProfile* argmax = nullptr) {
    const PolicyCostMatrices pc = policy_cost_matrices(ss, U);
    const int T = ss.T;
    const Index n = ss.n, p = ss.p;
    double total = 0.0;
    for (int z = 0; z < 2 * T + 1; ++z) {
        const Matrix gamma = z <= T ? Matrix(pc.ups_w.block(z * n, z * n, n, n))
                                    : Matrix(pc.ups_v.block((z - T - 1) * p, (z - T - 1) * p, p, p));
        const Matrix hat = model.balls[z].nominal_covariance();
        const OracleResult r = linearization_oracle(model.balls[z], gamma, hat, oracle_floor(model, z, T), delta);
        total += frob_inner(gamma, r.sigma_star.matrix());
        if (argmax) argmax->block(z) = r.sigma_star.matrix();
    }
    return total;
}

struct GapRow {
    double rho = 0.0;
    std::uint64_t seed = 0;
    double worst_case_gap = 0.0;
    double nominal_gap = 0.0;
    double nominal_cost = 0.0;
    bool converged = true;
};

inline GapRow gap_point(const ExperimentConfig& cfg, double rho, std::uint64_t seed) {
    const GeneratedInstance inst = generate_instance(cfg.d, cfg.T, seed);
    const NominalModel model = NominalModel::uniform(cfg.divergence, inst.nominal, rho);
    const StackedSystem ss = build_stacked(inst.sys);
    const FwResult fw = solve(inst.sys, model, cfg.fw);
    const AffinePolicy pol_hat = kalman_policy_to_purified(inst.sys, inst.nominal);
    const AffinePolicy pol_star = kalman_policy_to_purified(inst.sys, fw.worst_case);
    const StackedMoments nominal_moments = stack_moments(inst.nominal);
    GapRow row;
    row.rho = rho;
    row.seed = seed;
    row.converged = fw.trace.converged;
    row.worst_case_gap = fixed_policy_worst_case(ss, pol_hat.U, model, cfg.fw.oracle_delta) -
                         fixed_policy_worst_case(ss, pol_star.U, model, cfg.fw.oracle_delta);
    const double j_hat = affine_objective(ss, pol_hat, nominal_moments);
    row.nominal_gap = affine_objective(ss, pol_star, nominal_moments) - j_hat;
    row.nominal_cost = j_hat;
    return row;
}

inline CsvTable gaps_table(const std::vector<GapRow>& rows) {
    CsvTable t;
    t.header = {"rho", "seed", "worst_case_gap", "nominal_gap"};
    for (const auto& r : rows)
        t.rows.push_back(
            {format_double(r.rho), std::to_string(r.seed), format_double(r.worst_case_gap), format_double(r.nominal_gap)});
    return t;
}

struct ExperimentReport {
    std::vector<RunFailure> failures;
    std::vector<std::string> written;
};

inline void record_failure(ExperimentReport& rep, std::mutex& mu, RunFailure f) {
    std::lock_guard<std::mutex> lock(mu);
    rep.failures.push_back(std::move(f));
}

inline std::vector<GapRow> run_gaps(const ExperimentConfig& cfg, ExperimentReport* report = nullptr) {
    cfg.validate();
    std::vector<std::pair<double, std::uint64_t>> grid;
    for (std::uint64_t s : cfg.seeds)
        for (double r : cfg.rho) grid.emplace_back(r, s);
    std::vector<GapRow> rows(grid.size());
    std::vector<char> ok(grid.size(), 0);
    ExperimentReport local;
    std::mutex mu;
    run_grid(grid.size(), cfg.jobs, [&](size_t i) {
        const std::string ctx = "rho=" + format_double(grid[i].first) + " seed=" + std::to_string(grid[i].second);
        try {
            rows[i] = gap_point(cfg, grid[i].first, grid[i].second);
            ok[i] = 1;
            if (!rows[i].converged) record_failure(local, mu, {ctx, "not-converged", "Frank-Wolfe hit max_iters"});
        } catch (const std::exception& e) {
            record_failure(local, mu, describe_failure(ctx, e));
        }
    });
    std::vector<GapRow> out;
    for (size_t i = 0; i < rows.size(); ++i)
        if (ok[i]) out.push_back(rows[i]);
    if (report) report->failures.insert(report->failures.end(), local.failures.begin(), local.failures.end());
    return out;
}

struct ConvergenceRun {
    int T = 0;
    std::uint64_t seed = 0;
    FwTrace trace;
    double wall_seconds = 0.0;
};

inline std::vector<ConvergenceRun> run_solves(const ExperimentConfig& cfg, ExperimentReport* report = nullptr) {
    cfg.validate();
    std::vector<std::pair<int, std::uint64_t>> grid;
    for (int T : cfg.horizon_list())
        for (std::uint64_t s : cfg.seeds) grid.emplace_back(T, s);
    std::vector<ConvergenceRun> runs(grid.size());
    std::vector<char> ok(grid.size(), 0);
    ExperimentReport local;
    std::mutex mu;
    const double rho = cfg.rho.front();
    run_grid(grid.size(), cfg.jobs, [&](size_t i) {
        const std::string ctx = "T=" + std::to_string(grid[i].first) + " seed=" + std::to_string(grid[i].second);
        try {
            const GeneratedInstance inst = generate_instance(cfg.d, grid[i].first, grid[i].second);
            const NominalModel model = NominalModel::uniform(cfg.divergence, inst.nominal, rho);
            const auto t0 = std::chrono::steady_clock::now();
            FwResult res = solve(inst.sys, model, cfg.fw);
            runs[i].wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            runs[i].T = grid[i].first;
            runs[i].seed = grid[i].second;
            runs[i].trace = std::move(res.trace);
            ok[i] = 1;
            if (!runs[i].trace.converged) record_failure(local, mu, {ctx, "not-converged", "Frank-Wolfe hit max_iters"});
        } catch (const std::exception& e) {
            record_failure(local, mu, describe_failure(ctx, e));
        }
    });
    std::vector<ConvergenceRun> out;
    for (size_t i = 0; i < runs.size(); ++i)
        if (ok[i]) out.push_back(std::move(runs[i]));
    if (report) report->failures.insert(report->failures.end(), local.failures.begin(), local.failures.end());
    return out;
}

inline CsvTable convergence_summary(const std::vector<ConvergenceRun>& runs) {
    CsvTable t;
    t.header = {"T", "seed", "iterations", "converged", "final_gap", "final_rel_gap", "objective"};
    for (const auto& r : runs) {
        const FwRecord& last = r.trace.records.back();
        t.rows.push_back({std::to_string(r.T), std::to_string(r.seed), std::to_string(r.trace.records.size()),
                          r.trace.converged ? "1" : "0", format_double(last.fw_gap), format_double(last.rel_gap),
                          format_double(last.objective)});
    }
    return t;
}

inline CsvTable runtime_table(const std::vector<ConvergenceRun>& runs) {
    CsvTable t;
    t.header = {"T", "seed", "wall_seconds", "iterations"};
    for (const auto& r : runs)
        t.rows.push_back({std::to_string(r.T), std::to_string(r.seed), format_double(r.wall_seconds),
                          std::to_string(r.trace.records.size())});
    return t;
}

inline nlohmann::json failure_summary(const ExperimentReport& rep) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : rep.failures) arr.push_back({{"context", f.context}, {"code", f.code}, {"message", f.message}});
    return {{"ok", rep.failures.empty()}, {"failures", arr}};
}

}  // namespace drlqg
