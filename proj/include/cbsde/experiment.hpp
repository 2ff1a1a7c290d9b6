#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cbsde/bsde.hpp"
#include "cbsde/json_out.hpp"
#include "cbsde/lattice.hpp"
#include "cbsde/model.hpp"
#include "cbsde/problem_io.hpp"
#include "cbsde/reflected.hpp"
#include "cbsde/simulate.hpp"
#include "cbsde/switching.hpp"
#include "cbsde/verify.hpp"

namespace cbsde {

// exit codes shared by all subcommands
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNoConvergence = 3;
inline constexpr int kExitCrossCheck = 4;

struct ExperimentConfig {
    std::string problem_path;
    std::string engine = "lattice";  // lattice | lsmc
    int grid_steps = 100;
    double lattice_dx = 0.0;  // 0 = automatic spacing
    int lsmc_paths = 20000;
    std::string basis_kind = "polynomial";  // polynomial | partition | path_feature
    int basis_degree = 3;
    std::vector<int> basis_cells;
    std::uint64_t seed = 20240915;
    std::vector<double> ladder_schedule;  // empty = 1,2,4,...,2^14
    double ladder_tol = 1e-3;
    double penalty_level = 16384.0;  // reflected penalized route
    double route_tol = 1e-3;
    double compare_atol = 1e-3;
    int eval_paths = 20000;
    int sim_count = 8;
    int dump_paths = 4;
    std::string out_dir = "out";
};

inline ExperimentConfig load_config(const std::string& path) {
    using io_detail::json;
    const json j = io_detail::load_json(path);
    ExperimentConfig c;
    const auto base = std::filesystem::path(path).parent_path();
    c.problem_path = (base / j.at("problem").get<std::string>()).string();
    c.engine = j.value("engine", c.engine);
    if (j.contains("grid")) c.grid_steps = j.at("grid").value("N", c.grid_steps);
    if (j.contains("lattice")) c.lattice_dx = j.at("lattice").value("dx", 0.0);
    if (j.contains("lsmc")) {
        const auto& l = j.at("lsmc");
        c.lsmc_paths = l.value("paths", c.lsmc_paths);
        c.seed = l.value("seed", c.seed);
        if (l.contains("basis")) {
            const auto& b = l.at("basis");
            c.basis_kind = b.value("kind", c.basis_kind);
            c.basis_degree = b.value("degree", c.basis_degree);
            if (b.contains("cells"))
                for (const auto& v : b.at("cells")) c.basis_cells.push_back(v.get<int>());
        }
    }
    if (j.contains("ladder")) {
        const auto& l = j.at("ladder");
        c.ladder_tol = l.value("tol", c.ladder_tol);
        if (l.contains("schedule"))
            for (const auto& v : l.at("schedule")) c.ladder_schedule.push_back(v.get<double>());
        else if (l.contains("max_level")) {
            double n = 1;
            while (n <= l.at("max_level").get<double>()) {
                c.ladder_schedule.push_back(n);
                n *= 2;
            }
        }
    }
    if (j.contains("reflected")) {
        c.penalty_level = j.at("reflected").value("penalty_level", c.penalty_level);
        c.route_tol = j.at("reflected").value("route_tol", c.route_tol);
    }
    if (j.contains("compare")) c.compare_atol = j.at("compare").value("atol", c.compare_atol);
    if (j.contains("evaluate")) c.eval_paths = j.at("evaluate").value("paths", c.eval_paths);
    if (j.contains("simulate")) {
        c.sim_count = j.at("simulate").value("count", c.sim_count);
        c.dump_paths = j.at("simulate").value("dump", c.dump_paths);
    }
    return c;
}

namespace detail {

inline BasisSpec make_basis(const ExperimentConfig& c, const SwitchingProblem& p) {
    BasisSpec b;
    if (c.basis_kind == "polynomial")
        b.kind = BasisSpec::Kind::PolynomialPerMode;
    else if (c.basis_kind == "partition")
        b.kind = BasisSpec::Kind::LocalPartitionPerMode;
    else if (c.basis_kind == "path_feature")
        b.kind = BasisSpec::Kind::PathFeature;
    else
        throw MalformedSpec("unknown basis kind: " + c.basis_kind);
    b.degree = c.basis_degree;
    b.cells = c.basis_cells.empty() ? std::vector<int>(static_cast<std::size_t>(p.dim), 8)
                                    : c.basis_cells;
    b.box = p.box;
    return b;
}

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_solution_csv_lattice(const std::string& path, const BackwardSolution& sol,
                                       const Lattice& L) {
    std::ostringstream os;
    os << "t,mode";
    for (int j = 0; j < L.dim(); ++j) os << ",x_" << (j + 1);
    os << ",Y,dK";
    for (int j = 0; j < L.dim(); ++j) os << ",Z_" << (j + 1);
    os << "\n";
    std::vector<double> x(static_cast<std::size_t>(L.dim()));
    for (int k = 0; k <= L.grid().steps; ++k)
        for (int i = 0; i < sol.y.modes; ++i)
            for (int node = 0; node < sol.y.nodes; ++node) {
                L.node_state(node, x);
                os << csv_num(L.grid().t(k)) << "," << (i + 1);
                for (double xv : x) os << "," << csv_num(xv);
                os << "," << csv_num(sol.y.at(k, i, node)) << ","
                   << csv_num(sol.k_incr.at(k, i, node));
                for (int j = 0; j < L.dim(); ++j) os << "," << csv_num(sol.z.at(k, i, node, j));
                os << "\n";
            }
    write_text(path, os.str());
}

inline void write_solution_csv_lsmc(const std::string& path, const BackwardSolution& sol,
                                    const std::vector<PathBundle>& paths) {
    // per-time per-regime stratum summary
    std::ostringstream os;
    os << "t,mode,y_mean,n\n";
    const auto& grid = paths.front().grid;
    int m = 0;
    for (const auto& pb : paths) for (int r : pb.regime) m = std::max(m, r + 1);
    for (int k = 0; k <= grid.steps; ++k)
        for (int i = 0; i < m; ++i) {
            double acc = 0;
            long long n = 0;
            for (std::size_t p = 0; p < paths.size(); ++p)
                if (paths[p].regime[static_cast<std::size_t>(k)] == i) {
                    acc += sol.y_paths[static_cast<std::size_t>(k)][p];
                    ++n;
                }
            os << csv_num(grid.t(k)) << "," << (i + 1) << ","
               << csv_num(n ? acc / static_cast<double>(n) : 0.0) << "," << n << "\n";
        }
    write_text(path, os.str());
}

inline void write_reflected_csv(const std::string& dir, const ReflectedSolution& sol,
                                const Lattice& L) {
    std::vector<double> x(static_cast<std::size_t>(L.dim()));
    for (int i = 0; i < sol.m; ++i) {
        std::ostringstream os;
        os << "t,mode";
        for (int j = 0; j < L.dim(); ++j) os << ",x_" << (j + 1);
        os << ",Y,barrier,dK\n";
        for (int k = 0; k <= L.grid().steps; ++k)
            for (int node = 0; node < sol.y.nodes; ++node) {
                L.node_state(node, x);
                os << csv_num(L.grid().t(k)) << "," << (i + 1);
                for (double xv : x) os << "," << csv_num(xv);
                os << "," << csv_num(sol.y.at(k, i, node)) << ","
                   << csv_num(sol.barrier.at(k, i, node)) << ","
                   << csv_num(sol.k_incr.at(k, i, node)) << "\n";
            }
        write_text(dir + "/reflected_" + std::to_string(i + 1) + ".csv", os.str());
    }
}

inline JsonValue report_to_json(const PenalizationReport& rep) {
    JsonValue out = JsonValue::object();
    out["schedule"] = JsonValue::array_of(rep.schedule);
    out["y0"] = JsonValue::array_of(rep.y0);
    out["violation"] = JsonValue::array_of(rep.violation);
    out["k_sup"] = JsonValue::array_of(rep.k_sup);
    out["monotone"] = rep.monotone;
    out["converged"] = rep.converged;
    out["gap"] = rep.gap;
    out["tol"] = rep.tol;
    return out;
}

struct ConstrainedRun {
    LadderResult ladder;
    EngineKind engine;
    std::optional<Lattice> lattice;
    std::vector<PathBundle> paths;
    ConstrainedBsde equation;
};

inline ConstrainedRun run_constrained(const ExperimentConfig& c, const ProblemFile& pf,
                                      bool store_levels) {
    ConstrainedRun run;
    const auto& p = pf.problem;
    run.equation = pf.bsde_override ? *pf.bsde_override : switching_to_constrained(p);
    const TimeGrid grid{p.horizon, c.grid_steps};
    if (c.engine == "lattice") {
        run.engine = EngineKind::Lattice;
        run.lattice.emplace(make_lattice(p, grid, c.lattice_dx));
        run.ladder = penalization_ladder_lattice(run.equation, *run.lattice, p.box,
                                                 p.initial_mode, c.ladder_schedule, c.ladder_tol,
                                                 store_levels);
    } else if (c.engine == "lsmc") {
        run.engine = EngineKind::Lsmc;
        run.paths = sample_paths(p, grid, c.lsmc_paths, c.seed);
        LsmcOptions opt;
        opt.basis = make_basis(c, p);
        run.ladder = penalization_ladder_lsmc(run.equation, p.modes, p.box, run.paths, opt,
                                              c.ladder_schedule, 3.0, c.ladder_tol);
    } else {
        throw MalformedSpec("unknown engine: " + c.engine);
    }
    return run;
}

}  // namespace detail

// ============================================================================
// Subcommands
// ============================================================================

inline int cmd_validate(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const auto rep = validate_problem(pf.problem, c.seed);
    std::cout << rep.summary();
    write_text(c.out_dir + "/validation.json", validation_to_json(rep).dump(2));
    return rep.pass() ? kExitOk : kExitValidation;
}

inline int cmd_simulate(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const TimeGrid grid{pf.problem.horizon, c.grid_steps};
    const auto paths = sample_paths(pf.problem, grid, c.sim_count, c.seed);
    for (int i = 0; i < std::min<int>(c.dump_paths, static_cast<int>(paths.size())); ++i)
        dump_path(paths[static_cast<std::size_t>(i)],
                  c.out_dir + "/path_" + std::to_string(i) + ".csv");
    double marks = 0;
    for (const auto& p : paths) marks += static_cast<double>(p.marks.size());
    JsonValue out = JsonValue::object();
    out["paths"] = static_cast<long long>(paths.size());
    out["mean_marks"] = marks / static_cast<double>(paths.size());
    out["expected_marks"] = pf.problem.modes.total_rate() * grid.horizon;
    write_text(c.out_dir + "/simulate.json", out.dump(2));
    return kExitOk;
}

inline int cmd_solve_constrained(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const auto rep = validate_problem(pf.problem, c.seed);
    if (!rep.pass() && !pf.bsde_override) {
        std::cout << rep.summary();
        write_text(c.out_dir + "/validation.json", validation_to_json(rep).dump(2));
        return kExitValidation;
    }
    auto run = detail::run_constrained(c, pf, false);
    write_text(c.out_dir + "/penalization.json", detail::report_to_json(run.ladder.report).dump(2));
    if (run.engine == EngineKind::Lattice)
        detail::write_solution_csv_lattice(c.out_dir + "/solution.csv", run.ladder.solution,
                                           *run.lattice);
    else
        detail::write_solution_csv_lsmc(c.out_dir + "/solution.csv", run.ladder.solution,
                                        run.paths);
    JsonValue summary = JsonValue::object();
    summary["y0"] = run.ladder.solution.y0;
    summary["y0_stderr"] = run.ladder.solution.y0_stderr;
    summary["violation"] = run.ladder.report.violation.empty() ? 0.0
                                                               : run.ladder.report.violation.back();
    summary["converged"] = run.ladder.report.converged;
    summary["engine"] = c.engine;
    write_text(c.out_dir + "/summary.json", summary.dump(2));
    std::cout << "y0 = " << run.ladder.solution.y0
              << (run.ladder.report.converged ? " (converged)\n" : " (ladder exhausted)\n");
    return run.ladder.report.converged ? kExitOk : kExitNoConvergence;
}

inline int cmd_solve_reflected(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const auto rep = validate_problem(pf.problem, c.seed);
    if (!rep.pass()) {
        std::cout << rep.summary();
        return kExitValidation;
    }
    const auto& p = pf.problem;
    const auto sys = switching_to_oblique(p);
    const TimeGrid grid{p.horizon, c.grid_steps};
    JsonValue routes = JsonValue::object();
    int exit = kExitOk;
    if (p.markovian() && p.dim <= 2) {
        const auto L = make_lattice(p, grid, c.lattice_dx);
        const auto pen = solve_oblique_penalized(sys, c.penalty_level, L);
        const auto pic = solve_oblique_picard(sys, L);
        detail::write_reflected_csv(c.out_dir, pic, L);
        JsonValue y_pen = JsonValue::array(), y_pic = JsonValue::array();
        double gap = 0;
        for (int i = 0; i < p.modes.count; ++i) {
            y_pen.push_back(pen.y0(i, &L));
            y_pic.push_back(pic.y0(i, &L));
            gap = std::max(gap, std::fabs(pen.y0(i, &L) - pic.y0(i, &L)));
        }
        routes["y0_penalized"] = std::move(y_pen);
        routes["y0_picard"] = std::move(y_pic);
        routes["route_gap"] = gap;
        routes["route_tol"] = c.route_tol;
        routes["picard_rounds"] = pic.rounds_used;
        if (gap > c.route_tol) {
            exit = kExitCrossCheck;
            std::cout << "routes disagree: penalized vs picard gap " << gap << " > "
                      << c.route_tol << "\n";
        }
    }
    if (c.engine == "lsmc" || !(p.markovian() && p.dim <= 2)) {
        const auto fam = simulate_families(sys, grid, c.lsmc_paths, c.seed);
        BasisSpec basis = detail::make_basis(c, p);
        const auto mc = solve_oblique_penalized_lsmc(sys, c.penalty_level, fam, basis);
        routes["y0_lsmc"] = JsonValue::array_of(mc.y0_by_mode);
    }
    write_text(c.out_dir + "/routes.json", routes.dump(2));
    return exit;
}

inline int cmd_evaluate(const ExperimentConfig& c, const std::string& strategy_path) {
    if (!std::filesystem::exists(strategy_path)) {
        std::cout << "strategy file not found: " << strategy_path << "\n";
        return kExitValidation;
    }
    const auto pf = load_problem(c.problem_path);
    const auto s = load_strategy(strategy_path);
    const TimeGrid grid{pf.problem.horizon, c.grid_steps};
    const auto est = evaluate_strategy(pf.problem, s, grid, c.eval_paths, c.seed);
    JsonValue out = JsonValue::object();
    out["mean"] = est.mean;
    out["stderr"] = est.std_error;
    out["n"] = est.count;
    write_text(c.out_dir + "/payoff.json", out.dump(2));
    std::cout << "J = " << est.mean << " +- " << est.std_error << "\n";
    return kExitOk;
}

inline int cmd_extract_strategy(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const auto& p = pf.problem;
    if (!(p.markovian() && p.dim <= 2)) {
        std::cout << "strategy extraction requires a lattice-eligible problem\n";
        return kExitValidation;
    }
    const TimeGrid grid{p.horizon, c.grid_steps};
    const auto L = make_lattice(p, grid, c.lattice_dx);
    const auto sys = switching_to_oblique(p);
    const auto refl = solve_oblique_picard(sys, L);
    Strategy s;
    JsonValue out = JsonValue::object();
    if (p.vol.sup_abs_on(p.box) <= 1e-12) {
        s = extract_optimal_strategy(refl, L, p, grid);
        const auto est = evaluate_strategy(p, s, grid, 1, c.seed);
        out["payoff"] = est.mean;
    } else {
        const auto pol = run_optimal_policy(refl, L, p, grid, c.eval_paths, c.seed);
        s = pol.first_path_strategy;
        out["payoff"] = pol.payoff.mean;
        out["payoff_stderr"] = pol.payoff.std_error;
    }
    write_text(c.out_dir + "/strategy.json", strategy_to_json(s).dump(2));
    write_text(c.out_dir + "/extract.json", out.dump(2));
    return kExitOk;
}

/// Cross-validation of the four value routes: lattice dynamic program,
/// constrained penalization ladder, reflected solver, and the Monte Carlo
/// payoff of the extracted strategy.
inline int cmd_compare(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const auto rep = validate_problem(pf.problem, c.seed);
    if (!rep.pass()) {
        std::cout << rep.summary();
        return kExitValidation;
    }
    const auto& p = pf.problem;
    if (!(p.markovian() && p.dim <= 2)) {
        std::cout << "compare requires a lattice-eligible problem\n";
        return kExitValidation;
    }
    const TimeGrid grid{p.horizon, c.grid_steps};
    const auto L = make_lattice(p, grid, c.lattice_dx);

    const auto dp = switching_value_dp(L, p);
    const double v_dp = dp.at(0, p.initial_mode, L.origin_node());

    auto run = detail::run_constrained(c, pf, false);
    const double v_con = run.ladder.solution.y0;
    const double se_con = run.ladder.solution.y0_stderr;

    const auto sys = switching_to_oblique(p);
    const auto refl_pic = solve_oblique_picard(sys, L);
    const auto refl_pen = solve_oblique_penalized(sys, c.penalty_level, L);
    const double v_pic = refl_pic.y0(p.initial_mode, &L);
    const double v_pen = refl_pen.y0(p.initial_mode, &L);

    double v_strat = 0, se_strat = 0;
    Strategy s;
    if (p.vol.sup_abs_on(p.box) <= 1e-12) {
        s = extract_optimal_strategy(refl_pic, L, p, grid);
        const auto est = evaluate_strategy(p, s, grid, 1, c.seed);
        v_strat = est.mean;
    } else {
        const auto pol = run_optimal_policy(refl_pic, L, p, grid, c.eval_paths, c.seed);
        v_strat = pol.payoff.mean;
        se_strat = pol.payoff.std_error;
        s = pol.first_path_strategy;
    }

    struct Leg {
        const char* name;
        double value;
        double se;
    };
    const Leg legs[] = {{"lattice_dp", v_dp, 0.0},
                        {"constrained", v_con, se_con},
                        {"reflected_picard", v_pic, 0.0},
                        {"reflected_penalized", v_pen, 0.0},
                        {"strategy_mc", v_strat, se_strat}};
    JsonValue values = JsonValue::object();
    for (const auto& l : legs) values[l.name] = l.value;
    values["strategy_mc_stderr"] = se_strat;
    values["constrained_stderr"] = se_con;

    bool ok = true;
    JsonValue gaps = JsonValue::array();
    for (std::size_t ia = 0; ia < std::size(legs); ++ia)
        for (std::size_t ib = ia + 1; ib < std::size(legs); ++ib) {
            const auto& a = legs[ia];
            const auto& b = legs[ib];
            const double gap = std::fabs(a.value - b.value);
            double tol = c.compare_atol + 3.0 * std::sqrt(a.se * a.se + b.se * b.se);
            if (c.engine == "lsmc") tol = std::max(tol, 0.01 * std::fabs(v_dp));
            JsonValue g = JsonValue::object();
            g["a"] = a.name;
            g["b"] = b.name;
            g["gap"] = gap;
            g["tol"] = tol;
            g["ok"] = gap <= tol;
            if (gap > tol) ok = false;
            gaps.push_back(std::move(g));
        }
    JsonValue out = JsonValue::object();
    out["values"] = std::move(values);
    out["gaps"] = std::move(gaps);
    out["ok"] = ok;
    out["engine"] = c.engine;
    write_text(c.out_dir + "/compare.json", out.dump(2));
    write_text(c.out_dir + "/strategy.json", strategy_to_json(s).dump(2));
    std::printf("dp=%.6f constrained=%.6f picard=%.6f penalized=%.6f strategy=%.6f -> %s\n", v_dp,
                v_con, v_pic, v_pen, v_strat, ok ? "ok" : "MISMATCH");
    return ok ? kExitOk : kExitCrossCheck;
}

/// Numerical appendix battery on the configured problem: cone property spot
/// checks, the monotone-limit battery over the ladder, Picard round
/// monotonicity and viability of the stacked penalized-level differences.
inline int cmd_verify_appendix(const ExperimentConfig& c) {
    const auto pf = load_problem(c.problem_path);
    const auto& p = pf.problem;
    if (!(p.markovian() && p.dim <= 2)) {
        std::cout << "verify-appendix requires a lattice-eligible problem\n";
        return kExitValidation;
    }
    const TimeGrid grid{p.horizon, c.grid_steps};
    const auto L = make_lattice(p, grid, c.lattice_dx);
    JsonValue out = JsonValue::object();

    // cone projection properties on seeded samples
    bool cone_ok = true;
    {
        CounterRng rng(c.seed, 99);
        RngStream u(rng, 3);
        const auto cone = ConvexCone::orthant_product(4, 2);
        for (int s = 0; s < 200 && cone_ok; ++s) {
            std::vector<double> x(4), y(4);
            for (auto& v : x) v = 4 * u.uniform() - 2;
            for (auto& v : y) v = 4 * u.uniform() - 2;
            const auto px = project_cone(cone, x);
            const auto ppx = project_cone(cone, px);
            double idem = 0, dxy = 0, dpq = 0;
            for (int j = 0; j < 4; ++j) {
                idem = std::max(idem, std::fabs(ppx[static_cast<std::size_t>(j)] -
                                                px[static_cast<std::size_t>(j)]));
                dxy += (x[static_cast<std::size_t>(j)] - y[static_cast<std::size_t>(j)]) *
                       (x[static_cast<std::size_t>(j)] - y[static_cast<std::size_t>(j)]);
            }
            const auto py = project_cone(cone, y);
            for (int j = 0; j < 4; ++j)
                dpq += (px[static_cast<std::size_t>(j)] - py[static_cast<std::size_t>(j)]) *
                       (px[static_cast<std::size_t>(j)] - py[static_cast<std::size_t>(j)]);
            cone_ok = idem <= 1e-12 && dpq <= dxy + 1e-12;
        }
    }
    out["cone_properties"] = cone_ok;

    // ladder battery
    const auto eq = switching_to_constrained(p);
    auto ladder = penalization_ladder_lattice(eq, L, p.box, p.initial_mode, c.ladder_schedule,
                                              c.ladder_tol, true);
    const auto battery = monotone_limit_battery(ladder);
    JsonValue bj = JsonValue::object();
    bj["increasing"] = battery.increasing;
    bj["bounded"] = battery.bounded;
    bj["cauchy"] = battery.cauchy;
    bj["sup_y"] = battery.sup_y;
    bj["sup_z"] = battery.sup_z;
    bj["sup_u"] = battery.sup_u;
    bj["sup_k"] = battery.sup_k;
    bj["pass"] = battery.pass();
    out["monotone_limit_battery"] = std::move(bj);

    // Picard round monotonicity and penalized-level viability
    const auto sys = switching_to_oblique(p);
    const auto pic = solve_oblique_picard(sys, L);
    bool picard_mono = true;
    for (std::size_t r = 1; r < pic.rounds.size(); ++r)
        for (std::size_t q = 0; q < pic.rounds[r].v.size(); ++q)
            picard_mono = picard_mono && pic.rounds[r].v[q] >= pic.rounds[r - 1].v[q] - 1e-8;
    out["picard_rounds_monotone"] = picard_mono;

    const auto lvl_a = solve_oblique_penalized(sys, 64.0, L);
    const auto lvl_b = solve_oblique_penalized(sys, 128.0, L);
    const auto verdict =
        check_multidim_comparison(view_of_lattice(lvl_b.y), view_of_lattice(lvl_a.y), 1e-8);
    out["penalized_levels_viability"] = verdict.ok && verdict.precondition_ok;
    out["penalized_levels_worst"] = verdict.worst;

    const bool ok = cone_ok && battery.pass() && picard_mono && verdict.ok;
    out["ok"] = ok;
    write_text(c.out_dir + "/appendix.json", out.dump(2));
    return ok ? kExitOk : kExitCrossCheck;
}

}  // namespace cbsde
