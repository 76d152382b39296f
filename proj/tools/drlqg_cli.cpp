// drlqg: command-line front end for the robust LQG solver and its experiments.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "drlqg/drlqg.hpp"

namespace fs = std::filesystem;
using drlqg::ExperimentConfig;
using drlqg::ExperimentKind;
using drlqg::ExperimentReport;
using nlohmann::json;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<int> d, T, jobs, max_iters;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::vector<double> rho;
    std::vector<int> horizons;
    std::optional<std::string> divergence, out, step_rule;
    std::optional<double> gap_tol, oracle_delta;
    bool serial_oracles = false;
};

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config_path, "JSON config (schema 1)")->check(CLI::ExistingFile);
    app->add_option("--dim", o.d, "state dimension d");
    app->add_option("--horizon", o.T, "horizon T");
    app->add_option("--divergence", o.divergence, "wasserstein | kl | fisher");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--jobs", o.jobs, "concurrent grid points");
    app->add_option("--max-iters", o.max_iters, "Frank-Wolfe iteration cap");
    app->add_option("--gap-tol", o.gap_tol, "Frank-Wolfe gap tolerance");
    app->add_option("--oracle-delta", o.oracle_delta, "oracle suboptimality factor in (0, 1)");
    app->add_option("--step-rule", o.step_rule, "vanishing | line-search");
    app->add_flag("--serial-oracles", o.serial_oracles, "evaluate oracles on one thread");
}

ExperimentConfig build_config(ExperimentKind kind, const Overrides& o) {
    ExperimentConfig base;
    base.experiment = kind;
    if (kind == ExperimentKind::Gaps) {
        base.d = 2;
        base.T = 2;
        base.rho = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        base.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        base.fw.step_rule = drlqg::StepRule::LineSearchBacktracking;
        base.fw.gap_tol = 1e-9;
        base.fw.max_iters = 5000;
    } else if (kind == ExperimentKind::Convergence || kind == ExperimentKind::Runtime) {
        base.d = 10;
        base.T = 10;
        if (kind == ExperimentKind::Runtime) base.horizons = {2, 4, 6, 8, 10};
    }
    json j = json::object();
    if (!o.config_path.empty()) {
        try {
            j = json::parse(drlqg::read_file(o.config_path));
        } catch (const json::exception& e) {
            drlqg::fail(drlqg::ErrorCode::InvalidInput, std::string("config: ") + e.what());
        }
        if (j.contains("experiment"))
            drlqg::require(drlqg::parse_experiment(j.at("experiment").get<std::string>()) == kind,
                           drlqg::ErrorCode::InvalidInput, "config: experiment does not match the subcommand");
    }
    ExperimentConfig c = drlqg::config_from_json(j, base);
    c.experiment = kind;
    if (o.d) c.d = *o.d;
    if (o.T) c.T = *o.T;
    if (!o.horizons.empty()) c.horizons = o.horizons;
    if (o.divergence) c.divergence = drlqg::parse_divergence(*o.divergence);
    if (!o.rho.empty()) c.rho = o.rho;
    if (o.seed) c.seeds = {*o.seed};
    if (!o.seeds.empty()) c.seeds = o.seeds;
    if (o.out) c.output_dir = *o.out;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.max_iters) c.fw.max_iters = *o.max_iters;
    if (o.gap_tol) c.fw.gap_tol = *o.gap_tol;
    if (o.oracle_delta) c.fw.oracle_delta = *o.oracle_delta;
    if (o.step_rule) c.fw.step_rule = drlqg::parse_step_rule(*o.step_rule);
    if (o.serial_oracles) c.fw.parallel_oracles = false;
    c.validate();
    return c;
}

json matrix_json(const drlqg::Matrix& m) {
    json rows = json::array();
    for (drlqg::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (drlqg::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(r);
    }
    return rows;
}

void write_text(const fs::path& p, const std::string& s, ExperimentReport& rep) {
    drlqg::write_file_atomic(p.string(), s);
    rep.written.push_back(p.string());
}

void run_solve(const ExperimentConfig& c, ExperimentReport& rep) {
    const drlqg::GeneratedInstance inst = drlqg::generate_instance(c.d, c.T, c.seeds.front());
    const auto model = drlqg::NominalModel::uniform(c.divergence, inst.nominal, c.rho.front());
    const drlqg::FwResult res = drlqg::solve(inst.sys, model, c.fw);
    const drlqg::LqgSolution sol = drlqg::lqg_value(inst.sys, res.worst_case);
    const fs::path dir(c.output_dir);
    write_text(dir / "trace.csv", drlqg::trace_table(res.trace).to_string(), rep);
    json out;
    out["converged"] = res.trace.converged;
    out["iterations"] = res.trace.records.size();
    out["worst_case_cost"] = sol.cost;
    out["final_gap"] = res.trace.records.back().fw_gap;
    json blocks = json::array();
    for (int z = 0; z < res.worst_case.blocks(); ++z)
        blocks.push_back({{"term", drlqg::noise_term_name(z, c.T)}, {"sigma", matrix_json(res.worst_case.block(z))}});
    out["worst_case_covariances"] = blocks;
    json K = json::array(), L = json::array();
    for (const auto& k : sol.K) K.push_back(matrix_json(k));
    for (const auto& l : sol.L) L.push_back(matrix_json(l));
    out["controller_gains"] = K;
    out["filter_gains"] = L;
    write_text(dir / "result.json", out.dump(2) + "\n", rep);
    if (!res.trace.converged) rep.failures.push_back({"seed=" + std::to_string(c.seeds.front()), "not-converged",
                                                      "Frank-Wolfe hit max_iters"});
}

void run_stationary(const ExperimentConfig& c, ExperimentReport& rep) {
    drlqg::CsvTable summary;
    summary.header = {"seed", "iterations", "converged", "avg_cost_nominal", "avg_cost_worst"};
    const fs::path dir(c.output_dir);
    for (std::uint64_t seed : c.seeds) {
        const std::string ctx = "seed=" + std::to_string(seed);
        try {
            const drlqg::GeneratedInstance inst = drlqg::generate_instance(c.d, 1, seed);
            drlqg::StationarySystem ss{inst.sys.A[0], inst.sys.B[0], inst.sys.C[0], inst.sys.Q[0], inst.sys.R[0]};
            const double rho = c.rho.front();
            const auto bw = drlqg::make_ball(c.divergence, drlqg::MomentPair::centered(inst.nominal.W[0]), rho);
            const auto bv = drlqg::make_ball(c.divergence, drlqg::MomentPair::centered(inst.nominal.V[0]), rho);
            const auto res = drlqg::solve_stationary_fw(ss, bw, bv, c.fw);
            const double nominal_cost = drlqg::stationary_cost(ss, inst.nominal.W[0], inst.nominal.V[0]).avg_cost;
            write_text(dir / ("stationary_trace_seed" + std::to_string(seed) + ".csv"),
                       drlqg::trace_table(res.trace).to_string(), rep);
            summary.rows.push_back({std::to_string(seed), std::to_string(res.trace.records.size()),
                                    res.trace.converged ? "1" : "0", drlqg::format_double(nominal_cost),
                                    drlqg::format_double(res.trace.records.back().objective)});
            if (!res.trace.converged) rep.failures.push_back({ctx, "not-converged", "Frank-Wolfe hit max_iters"});
        } catch (const std::exception& e) {
            rep.failures.push_back(drlqg::describe_failure(ctx, e));
        }
    }
    write_text(dir / "stationary_summary.csv", summary.to_string(), rep);
}

int execute(ExperimentKind kind, const ExperimentConfig& c) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport rep;
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    switch (kind) {
        case ExperimentKind::SingleSolve:
            try {
                run_solve(c, rep);
            } catch (const std::exception& e) {
                rep.failures.push_back(drlqg::describe_failure("seed=" + std::to_string(c.seeds.front()), e));
            }
            break;
        case ExperimentKind::Gaps: {
            const auto rows = drlqg::run_gaps(c, &rep);
            write_text(dir / "gaps.csv", drlqg::gaps_table(rows).to_string(), rep);
            break;
        }
        case ExperimentKind::Convergence: {
            const auto runs = drlqg::run_solves(c, &rep);
            for (const auto& r : runs)
                write_text(dir / ("trace_T" + std::to_string(r.T) + "_seed" + std::to_string(r.seed) + ".csv"),
                           drlqg::trace_table(r.trace).to_string(), rep);
            write_text(dir / "convergence_summary.csv", drlqg::convergence_summary(runs).to_string(), rep);
            break;
        }
        case ExperimentKind::Runtime: {
            const auto runs = drlqg::run_solves(c, &rep);
            write_text(dir / "runtime.csv", drlqg::runtime_table(runs).to_string(), rep);
            break;
        }
        case ExperimentKind::InfiniteHorizon:
            run_stationary(c, rep);
            break;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json meta = drlqg::run_metadata(c, wall);
    meta["outputs"] = rep.written;
    meta["status"] = drlqg::failure_summary(rep);
    drlqg::write_file_atomic((dir / "metadata.json").string(), meta.dump(2) + "\n");
    if (!rep.failures.empty()) {
        std::cerr << drlqg::failure_summary(rep).dump() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributionally robust LQG solver"};
    app.require_subcommand(1);

    Overrides o;
    auto* solve = app.add_subcommand("solve", "solve one generated instance");
    add_common(solve, o);
    solve->add_option("--seed", o.seed, "instance seed")->required();
    solve->add_option("--rho", o.rho, "ambiguity radius")->required()->expected(1);
    for (const char* opt : {"--dim", "--horizon", "--divergence", "--out"}) solve->get_option(opt)->required();

    std::vector<CLI::App*> sweeps;
    for (const auto& [name, desc] : std::vector<std::pair<std::string, std::string>>{
             {"gaps", "worst-case and nominal gaps over a rho grid"},
             {"convergence", "Frank-Wolfe traces per horizon and seed"},
             {"runtime", "wall time per horizon and seed"},
             {"stationary", "infinite-horizon worst case per seed"}}) {
        auto* sub = app.add_subcommand(name, desc);
        add_common(sub, o);
        sub->add_option("--seed", o.seed, "single seed");
        sub->add_option("--seeds", o.seeds, "seed list");
        sub->add_option("--rho", o.rho, "radius or radius list");
        if (name == "convergence" || name == "runtime") sub->add_option("--horizons", o.horizons, "horizon list");
        sweeps.push_back(sub);
    }

    CLI11_PARSE(app, argc, argv);

    ExperimentKind kind = ExperimentKind::SingleSolve;
    if (app.got_subcommand("gaps")) kind = ExperimentKind::Gaps;
    else if (app.got_subcommand("convergence")) kind = ExperimentKind::Convergence;
    else if (app.got_subcommand("runtime")) kind = ExperimentKind::Runtime;
    else if (app.got_subcommand("stationary")) kind = ExperimentKind::InfiniteHorizon;

    try {
        return execute(kind, build_config(kind, o));
    } catch (const std::exception& e) {
        ExperimentReport rep;
        rep.failures.push_back(drlqg::describe_failure("setup", e));
        std::cerr << drlqg::failure_summary(rep).dump() << "\n";
        return 2;
    }
}
