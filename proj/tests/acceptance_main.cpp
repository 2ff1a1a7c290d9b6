// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one pass/fail line each. Exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cbsde/experiment.hpp"
#include "cbsde/switching.hpp"
#include "cbsde/verify.hpp"
#include "oracles.hpp"

using namespace cbsde;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool ok, const std::string& detail = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", idx, name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!ok) ++g_failures;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

bool monotone_levels(const LadderResult& lad, double tol) {
    for (std::size_t l = 1; l < lad.levels.size(); ++l)
        for (std::size_t q = 0; q < lad.levels[l].y.v.size(); ++q)
            if (!(lad.levels[l].y.v[q] >= lad.levels[l - 1].y.v[q] - tol)) return false;
    return true;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    const std::string configs = oracles::config_dir();
    const char* cli_env = std::getenv("CBSDE_CLI");
    const std::string cli = cli_env ? cli_env : "";

    // shared D1 artifacts (criteria 1, 3, 4, 5, 6, 9)
    const auto d1 = load_problem(configs + "/d1.json").problem;
    const TimeGrid grid_d1{d1.horizon, 200};
    const auto L1 = make_lattice(d1, grid_d1);
    const auto eq1 = switching_to_constrained(d1);
    const auto sys1 = switching_to_oblique(d1);

    // ------------------------------------------------------------------ 1
    {
        Timer timer;
        const double oracle = oracles::enumerate_switching_value(d1, grid_d1, 2, 0);
        const double oracle2 = oracles::enumerate_switching_value(d1, grid_d1, 2, 1);
        const auto dp = switching_value_dp(L1, d1);
        const auto pic = solve_oblique_picard(sys1, L1);
        const auto pen = solve_oblique_penalized(sys1, 16384.0, L1);
        const auto lad = penalization_ladder_lattice(eq1, L1, d1.box, 0, {}, 2e-4, false);
        const auto strat = extract_optimal_strategy(pic, L1, d1, grid_d1);
        const auto J = evaluate_strategy(d1, strat, grid_d1, 1, 1);
        const double tol = 1e-3;
        bool ok = std::fabs(oracle - 0.9) <= 1e-12 && std::fabs(oracle2 - 1.0) <= 1e-12;
        std::vector<std::pair<std::string, double>> legs = {
            {"dp", dp.at(0, 0, L1.origin_node())},
            {"picard", pic.y0(0, &L1)},
            {"penalized", pen.y0(0, &L1)},
            {"ladder", lad.solution.y0},
            {"J(strategy)", J.mean}};
        std::string detail;
        for (const auto& [name, v] : legs) {
            ok = ok && std::fabs(v - 0.9) <= tol;
            detail += name + "=" + fmt(v) + " ";
        }
        const double mode2[] = {dp.at(0, 1, L1.origin_node()), pic.y0(1, &L1), pen.y0(1, &L1)};
        for (double v : mode2) ok = ok && std::fabs(v - 1.0) <= tol;
        ok = ok && lad.report.converged && timer.seconds() < 5.0;
        report(1, "deterministic switching oracle (all routes = 0.9, mode 2 = 1.0)", ok,
               detail + "runtime=" + fmt(timer.seconds()) + "s");
    }

    // shared stochastic artifacts (criteria 2, 3, 8)
    const auto stoch = load_problem(configs + "/stoch1d.json").problem;
    const TimeGrid grid_st{stoch.horizon, 50};
    const auto Lst = make_lattice(stoch, grid_st);
    const auto eq_st = switching_to_constrained(stoch);
    const auto sys_st = switching_to_oblique(stoch);

    // ------------------------------------------------------------------ 2
    {
        Timer timer;
        const auto lat = penalization_ladder_lattice(eq_st, Lst, stoch.box, 0, {}, 2e-4, false);
        const auto paths = sample_paths(stoch, grid_st, 100000, 20240915);
        LsmcOptions opt;
        opt.basis.kind = BasisSpec::Kind::PolynomialPerMode;
        opt.basis.degree = 3;
        opt.basis.box = stoch.box;
        const auto mc = penalization_ladder_lsmc(eq_st, stoch.modes, stoch.box, paths, opt, {},
                                                 3.0, 1e-3);
        const double gap = std::fabs(mc.solution.y0 - lat.solution.y0);
        const double tol = std::max(0.01 * std::fabs(lat.solution.y0),
                                    3.0 * mc.solution.y0_stderr);
        const bool ok = lat.report.converged && mc.report.converged && gap <= tol &&
                        timer.seconds() < 60.0;
        report(2, "stochastic cross-check (LSMC vs lattice at t=0)", ok,
               "lattice=" + fmt(lat.solution.y0) + " lsmc=" + fmt(mc.solution.y0) + " gap=" +
                   fmt(gap) + " tol=" + fmt(tol) + " runtime=" + fmt(timer.seconds()) + "s");
    }

    // full-schedule ladders with stored levels (criteria 3, 4, 5, 6)
    const auto full1 = penalization_ladder_lattice(eq1, L1, d1.box, 0, {}, -1.0, true);
    const auto full_st = penalization_ladder_lattice(eq_st, Lst, stoch.box, 0, {}, -1.0, true);

    // ------------------------------------------------------------------ 3
    {
        const bool ok = full1.levels.size() == 15 && full_st.levels.size() == 15 &&
                        monotone_levels(full1, 1e-8) && monotone_levels(full_st, 1e-8);
        report(3, "monotone penalization at every node, schedule 1..2^14", ok,
               "d1 levels=" + fmt(static_cast<double>(full1.levels.size())) + " stoch levels=" +
                   fmt(static_cast<double>(full_st.levels.size())));
    }

    // ------------------------------------------------------------------ 4
    {
        bool ok = true;
        std::string detail;
        struct Case {
            const SwitchingProblem* p;
            const Lattice* L;
            const ObliqueSystemSpec* sys;
            const LadderResult* lad;
            const char* name;
        } cases[] = {{&d1, &L1, &sys1, &full1, "d1"}, {&stoch, &Lst, &sys_st, &full_st, "stoch"}};
        for (const auto& c : cases) {
            const auto pic = solve_oblique_picard(*c.sys, *c.L);
            const auto ident = identify_constrained(pic, *c.L, c.p->initial_mode);
            double worst = 0;
            for (const auto& lvl : c.lad->levels)
                for (std::size_t q = 0; q < lvl.y.v.size(); ++q)
                    worst = std::max(worst, lvl.y.v[q] - ident.y.v[q]);
            const double limit_gap = std::fabs(c.lad->levels.back().y0 - ident.y0);
            ok = ok && worst <= 1e-8 && limit_gap <= 1e-3;
            detail += std::string(c.name) + ": excess=" + fmt(worst) + " limit_gap=" +
                      fmt(limit_gap) + "  ";
        }
        report(4, "reflected identification dominates the ladder; limits meet", ok, detail);
    }

    // ------------------------------------------------------------------ 5
    {
        bool ok = true;
        const auto dp1 = switching_value_dp(L1, d1);
        const auto dp2 = switching_value_dp(Lst, stoch);
        ok = ok && bound_check(dp1, d1, grid_d1) && bound_check(dp2, stoch, grid_st);
        const auto pic1 = solve_oblique_picard(sys1, L1);
        const auto pic2 = solve_oblique_picard(sys_st, Lst);
        ok = ok && bound_check(pic1.y, d1, grid_d1) && bound_check(pic2.y, stoch, grid_st);
        for (const auto& lvl : full1.levels) ok = ok && bound_check(lvl.y, d1, grid_d1);
        for (const auto& lvl : full_st.levels) ok = ok && bound_check(lvl.y, stoch, grid_st);
        report(5, "uniform bound |Y| <= (T - t + 1) max(psi_bar, g_bar) on all values", ok);
    }

    // ------------------------------------------------------------------ 6
    {
        const auto lad = penalization_ladder_lattice(eq1, L1, d1.box, 0, {}, 2e-4, false);
        bool non_increasing = true;
        for (std::size_t l = 1; l < full1.report.violation.size(); ++l)
            non_increasing = non_increasing &&
                             full1.report.violation[l] <= full1.report.violation[l - 1] + 1e-12;
        const double final_viol = lad.report.violation.back();
        const bool ok = lad.report.converged && final_viol <= 1e-4 && non_increasing;
        report(6, "constraint violation at convergence <= 1e-4 and non-increasing", ok,
               "final=" + fmt(final_viol));
    }

    // ------------------------------------------------------------------ 7
    {
        // randomized ordered driver/terminal pairs, generated inside the
        // monotone-stencil envelope so the discrete comparison is strict
        SwitchingProblem base = oracles::make_d1();
        base.modes = {2, {1.0, 0.5}};
        base.box = {{-1.0}, {1.0}};
        const TimeGrid grid{1.0, 40};
        bool ok = true;
        std::string detail;
        CounterRng rng(2024, 0);
        RngStream u(rng, 5);
        for (int trial = 0; trial < 20 && ok; ++trial) {
            SwitchingProblem p = base;
            const double s0a = 0.25 + 0.2 * u.uniform(), s1a = 0.15 * u.uniform();
            p.vol.per_mode = {AffineMap{1, 1, {s1a}, {s0a}, true},
                              AffineMap{1, 1, {0.15 * u.uniform()}, {0.25 + 0.2 * u.uniform()}, true}};
            p.drift.per_mode = {AffineMap{1, 1, {0.4 * u.uniform() - 0.2}, {0.2 * u.uniform() - 0.1}, false},
                                AffineMap{1, 1, {0.4 * u.uniform() - 0.2}, {0.2 * u.uniform() - 0.1}, false}};
            const auto L = make_lattice(p, grid);
            // safe z-coefficient bound from the interior stencil floor
            const double sig_min = 0.25, sig_max = 0.6, b_bar = 0.3;
            const double dx = 0.6 * std::sqrt(3.0 * grid.dt());
            const double pmin = sig_min * sig_min * grid.dt() / (2 * dx * dx) -
                                b_bar * grid.dt() / (2 * dx);
            const double gam_sum_cap = 0.97;
            const double beta_cap =
                0.8 * gam_sum_cap * std::max(0.0, pmin) * 2.0 * dx / (sig_max * grid.dt());

            DriverSpec f1;
            f1.base.kind = CoeffKind::Affine;
            f1.base.rows = 1;
            f1.base.per_mode = {AffineMap{1, 1, {u.uniform() - 0.5}, {u.uniform() - 0.5}, false},
                                AffineMap{1, 1, {u.uniform() - 0.5}, {u.uniform() - 0.5}, false}};
            f1.y_coef = u.uniform() - 0.5;
            f1.z_coef = {beta_cap * (2 * u.uniform() - 1)};
            f1.u_coef = {0.8 * u.uniform(), 0.8 * u.uniform()};
            f1.lipschitz = std::fabs(f1.y_coef) + std::fabs(f1.z_coef[0]) + 2.0;
            f1.jump_monotonicity = std::make_pair(std::min(f1.u_coef[0], f1.u_coef[1]),
                                                  std::max(f1.u_coef[0], f1.u_coef[1]));
            DriverSpec f2 = f1;
            const double lift = 0.5 * u.uniform();
            for (auto& mmap : f2.base.per_mode) mmap.a[0] += lift;

            TerminalSpec xi1{CoefficientSpec{}};
            xi1.value.kind = CoeffKind::Affine;
            xi1.value.rows = 1;
            xi1.value.per_mode = {AffineMap{1, 1, {u.uniform() - 0.5}, {u.uniform() - 0.5}, false},
                                  AffineMap{1, 1, {u.uniform() - 0.5}, {u.uniform() - 0.5}, false}};
            TerminalSpec xi2 = xi1;
            const double tlift = 0.5 * u.uniform();
            for (auto& mmap : xi2.value.per_mode) mmap.a[0] += tlift;

            const auto verdict = check_comparison(f1, xi1, f2, xi2, L, p.box, 0, 1e-8);
            if (!(verdict.precondition_ok && verdict.ok)) {
                ok = false;
                detail = "trial " + std::to_string(trial) + ": " + verdict.detail +
                         " excess=" + fmt(verdict.max_excess);
            }
        }
        report(7, "comparison lemma on 20 randomized ordered pairs", ok, detail);
    }

    // ------------------------------------------------------------------ 8
    {
        bool ok = true;
        std::string detail;
        for (const auto* c : {&sys1, &sys_st}) {
            const auto& L = (c == &sys1) ? L1 : Lst;
            const auto pic = solve_oblique_picard(*c, L);
            for (std::size_t r = 1; r < pic.rounds.size() && ok; ++r)
                for (std::size_t q = 0; q < pic.rounds[r].v.size(); ++q)
                    if (!(pic.rounds[r].v[q] >= pic.rounds[r - 1].v[q] - 1e-8)) {
                        ok = false;
                        detail = "picard round monotonicity fails";
                    }
            const auto lo = solve_oblique_penalized(*c, 64.0, L);
            const auto hi = solve_oblique_penalized(*c, 128.0, L);
            const auto verdict =
                check_multidim_comparison(view_of_lattice(hi.y), view_of_lattice(lo.y), 1e-8);
            if (!(verdict.ok && verdict.precondition_ok)) {
                ok = false;
                detail = "stacked-level viability: " + verdict.witness;
            }
        }
        report(8, "multidimensional comparison / viability on rounds and levels", ok, detail);
    }

    // ------------------------------------------------------------------ 9
    {
        bool ok = true;
        std::string detail;
        const auto pic = solve_oblique_picard(sys1, L1);
        const auto ident = identify_constrained(pic, L1, 0);
        const auto s_walk = extract_optimal_strategy(pic, L1, d1, grid_d1);
        const auto s_jump = strategy_from_u(ident, L1, d1, grid_d1);
        ok = ok && s_walk.switches == s_jump.switches && s_walk.switches.size() == 1;

        const auto expensive = load_problem(configs + "/d1_expensive.json").problem;
        const auto Lx = make_lattice(expensive, grid_d1);
        const auto picx = solve_oblique_picard(switching_to_oblique(expensive), Lx);
        const auto identx = identify_constrained(picx, Lx, 0);
        const auto sx_walk = extract_optimal_strategy(picx, Lx, expensive, grid_d1);
        const auto sx_jump = strategy_from_u(identx, Lx, expensive, grid_d1);
        ok = ok && sx_walk.switches.empty() && sx_jump.switches.empty();

        const auto lad = penalization_ladder_lattice(eq1, L1, d1.box, 0, {}, 2e-4, false);
        auto candidates = random_strategies(d1, 50, 77);
        ok = ok && certify_optimality(d1, s_walk, candidates, grid_d1, 500, 13,
                                      lad.solution.y0, 1e-3);
        report(9, "strategy consistency and optimality certification", ok, detail);
    }

    // ------------------------------------------------------------------ 10
    {
        bool ok = !cli.empty();
        std::string detail = ok ? "" : "CBSDE_CLI not set";
        if (ok) {
            const std::string cfgp = configs + "/exp_determinism.json";
            auto run = [&](const std::string& out, int threads) {
                const std::string cmd = cli + " --config " + cfgp + " --out " + out +
                                        " --threads " + std::to_string(threads) +
                                        " compare > " + out + ".log 2>&1";
                return WEXITSTATUS(std::system(cmd.c_str()));
            };
            const int r1 = run("det_a", 1), r2 = run("det_b", 1), r3 = run("det_c", 8);
            ok = r1 == 0 && r2 == 0 && r3 == 0;
            if (!ok) detail = "compare exit codes " + std::to_string(r1) + "," +
                              std::to_string(r2) + "," + std::to_string(r3);
            for (const char* f : {"compare.json", "strategy.json"}) {
                const auto a = read_file(std::string("det_a/") + f);
                const auto b = read_file(std::string("det_b/") + f);
                const auto c = read_file(std::string("det_c/") + f);
                if (a.empty() || a != b || a != c) {
                    ok = false;
                    detail = std::string("outputs differ: ") + f;
                }
            }
        }
        report(10, "bit-identical outputs across reruns and thread counts", ok, detail);
    }

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures;
}
