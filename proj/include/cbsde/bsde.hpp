#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbsde/lattice.hpp"
#include "cbsde/lsmc.hpp"
#include "cbsde/model.hpp"
#include "cbsde/parallel.hpp"
#include "cbsde/simulate.hpp"
#include "cbsde/stats.hpp"
#include "cbsde/step_core.hpp"

namespace cbsde {

enum class EngineKind { Lattice, Lsmc };

/// Discrete quadruple of a backward solve. On the lattice engine the value is
/// kept per (time, regime, node) and the jump component is the cross-regime
/// value difference; on the simulation engine values live on paths with
/// per-regime predictors per time index.
struct BackwardSolution {
    EngineKind engine = EngineKind::Lattice;

    // lattice payload
    LatticeField y;       // (N+1, m, nodes)
    LatticeField z;       // (N+1, m, nodes) width = dim
    LatticeField k_incr;  // increment of K over [t_k, t_{k+1})

    // simulation payload
    int path_count = 0;
    std::vector<std::vector<double>> y_paths;  // [k][p]
    std::vector<std::vector<double>> u_paths;  // [k][p*m]
    std::vector<std::vector<double>> k_cum;    // cumulative K, [k][p]
    std::vector<ModeFits> fits;                // per-regime value predictors per k
    BasisSpec basis;

    double y0 = 0;
    double y0_stderr = 0;

    double u_lattice(int k, int i, int node, int j) const {
        return y.at(k, j, node) - y.at(k, i, node);
    }
    /// value at t=0 of regime i (lattice engine)
    double y0_mode(int i, const Lattice& L) const { return y.at(0, i, L.origin_node()); }
};

// ============================================================================
// Lattice backward solver
// ============================================================================

namespace detail {

struct LatticeStepBuffers {
    std::vector<double> cont, ubar, zrow, x, xc;
    std::vector<double> y, dk;
};

}  // namespace detail

/// Penalized backward solve on the regime-augmented lattice. The step is the
/// conditional one-step dynamics with the jump compensator cancelled exactly
/// against the kernel's regime-relabel part, leaving a frozen-regime
/// continuation plus driver plus penalty:
///   y_i = E_i[Y_{k+1}(i,.)] + f(t, i, x, y_i, z_i, ubar_i) dt
///         + n sum_j lambda_j dt h^-(t, y_i, ., y_j - y_i, j).
/// The driver's (z, u) arguments are explicit (read off time-(k+1) values);
/// the penalty couples the regimes implicitly.
inline BackwardSolution solve_penalized_lattice(const ConstrainedBsde& eq, double penalty,
                                                const Lattice& L, const StateBox& box,
                                                int initial_mode) {
    const int N = L.grid().steps, m = L.modes().count, nodes = L.node_count(), d = L.dim();
    const double dt = L.grid().dt();
    const auto& lambda = L.modes().intensity;
    const bool need_u = eq.driver.depends_on_u();
    const bool need_z = eq.driver.depends_on_z();
    const ConstraintSpec* con = eq.constraint ? &*eq.constraint : nullptr;
    if (eq.driver.lipschitz * dt >= 1.0)
        throw NoConvergence("solve_bsde: driver Lipschitz constant times dt is >= 1");

    BackwardSolution sol;
    sol.engine = EngineKind::Lattice;
    sol.y = LatticeField(N + 1, m, nodes);
    sol.z = LatticeField(N + 1, m, nodes, d);
    sol.k_incr = LatticeField(N + 1, m, nodes);

    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = 0; i < m; ++i)
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            sol.y.at(N, i, node) = eq.terminal.eval(L.grid().horizon, i, box.clamped(x));
        }

    std::vector<double> cont(static_cast<std::size_t>(m));
    std::vector<double> ubar(static_cast<std::size_t>(m) * m);  // [i*m + j]
    std::vector<double> zrow(static_cast<std::size_t>(m) * d);
    std::vector<double> yv(static_cast<std::size_t>(m)), dk(static_cast<std::size_t>(m));
    std::vector<double> xc(static_cast<std::size_t>(d));

    for (int k = N - 1; k >= 0; --k) {
        const double t = L.grid().t(k);
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            xc = box.clamped(x);
            for (int i = 0; i < m; ++i) {
                const auto st = L.stencil(t, i, node);
                const double own = L.expect_frozen(st, sol.y.slice(k + 1, i));
                cont[static_cast<std::size_t>(i)] = own;
                if (need_u)
                    for (int j = 0; j < m; ++j)
                        ubar[static_cast<std::size_t>(i * m + j)] =
                            j == i ? 0.0 : L.expect_frozen(st, sol.y.slice(k + 1, j)) - own;
                if (need_z || d > 0)
                    L.gradient_z(t, i, node, sol.y.slice(k + 1, i),
                                 std::span<double>(zrow.data() + static_cast<std::size_t>(i) * d,
                                                   static_cast<std::size_t>(d)));
            }
            auto f_dt = [&](int i, double yh, std::span<const double>) {
                const std::span<const double> zi(zrow.data() + static_cast<std::size_t>(i) * d,
                                                 static_cast<std::size_t>(d));
                const std::span<const double> ui(
                    need_u ? ubar.data() + static_cast<std::size_t>(i) * m : ubar.data(),
                    need_u ? static_cast<std::size_t>(m) : 0);
                return dt * eq.driver.eval(t, i, xc, yh, zi, ui, lambda);
            };
            auto kink = [&](int i, int j, double yj) { return con->kink(t, i, j, yj); };
            auto beta = [&](int, int j) {
                return penalty * lambda[static_cast<std::size_t>(j)] * dt *
                       (con ? con->slope() : 0.0);
            };
            step::solve_mode_system(m, f_dt, kink, beta, step::AllTargets{m}, cont, yv, dk,
                                    con != nullptr && penalty > 0);
            for (int i = 0; i < m; ++i) {
                sol.y.at(k, i, node) = yv[static_cast<std::size_t>(i)];
                sol.k_incr.at(k, i, node) = dk[static_cast<std::size_t>(i)];
                for (int w = 0; w < d; ++w)
                    sol.z.at(k, i, node, w) = zrow[static_cast<std::size_t>(i * d + w)];
            }
        }
    }
    sol.y0 = sol.y.at(0, initial_mode, L.origin_node());
    return sol;
}

inline BackwardSolution solve_bsde_lattice(const DriverSpec& driver, const TerminalSpec& terminal,
                                           const Lattice& L, const StateBox& box,
                                           int initial_mode) {
    ConstrainedBsde eq{driver, std::nullopt, terminal};
    return solve_penalized_lattice(eq, 0.0, L, box, initial_mode);
}

/// Empirical constraint violation  E int int |h^-|^2 lambda(dj) dt  of a
/// lattice solution under the forward occupation measure.
inline double violation_norm_lattice(const BackwardSolution& sol, const ConstrainedBsde& eq,
                                     const Lattice& L, const LatticeField& rho) {
    if (!eq.constraint) return 0.0;
    const auto& con = *eq.constraint;
    const int m = L.modes().count, nodes = L.node_count(), N = L.grid().steps;
    const double dt = L.grid().dt();
    double acc = 0;
    for (int k = 0; k < N; ++k) {
        const double t = L.grid().t(k);
        for (int i = 0; i < m; ++i)
            for (int node = 0; node < nodes; ++node) {
                const double w = rho.at(k, i, node);
                if (w == 0) continue;
                double s = 0;
                for (int j = 0; j < m; ++j) {
                    if (j == i) continue;
                    const double u = sol.u_lattice(k, i, node, j);
                    const double h = con.value(t, i, j, sol.y.at(k, i, node), u);
                    const double hm = std::max(0.0, -h);
                    s += L.modes().intensity[static_cast<std::size_t>(j)] * hm * hm;
                }
                acc += w * s * dt;
            }
    }
    return acc;
}

/// Max conditional one-step residual of the discrete dynamics
///   Y_k = E[Y_{k+1}] + f dt + dK - sum_j U_k(j) lambda_j dt
/// under the regime-augmented kernel, with (Y, Z, U, K) read off the solution.
inline double dynamics_residual_max(const BackwardSolution& sol, const ConstrainedBsde& eq,
                                    const Lattice& L, const StateBox& box) {
    const int m = L.modes().count, nodes = L.node_count(), N = L.grid().steps, d = L.dim();
    const double dt = L.grid().dt();
    const auto& lambda = L.modes().intensity;
    double worst = 0;
    std::vector<double> x(static_cast<std::size_t>(d)), u(static_cast<std::size_t>(m));
    for (int k = 0; k < N; ++k) {
        const double t = L.grid().t(k);
        const auto eaug = conditional_expectation(L, sol.y, k);
        for (int i = 0; i < m; ++i)
            for (int node = 0; node < nodes; ++node) {
                L.node_state(node, x);
                for (int j = 0; j < m; ++j) u[static_cast<std::size_t>(j)] = sol.u_lattice(k, i, node, j);
                std::vector<double> zi(static_cast<std::size_t>(d));
                for (int w = 0; w < d; ++w) zi[static_cast<std::size_t>(w)] = sol.z.at(k, i, node, w);
                const double f =
                    eq.driver.eval(t, i, box.clamped(x), sol.y.at(k, i, node), zi, u, lambda);
                double comp = 0;
                for (int j = 0; j < m; ++j)
                    comp += u[static_cast<std::size_t>(j)] * lambda[static_cast<std::size_t>(j)] * dt;
                const double r = sol.y.at(k, i, node) - eaug.at(0, i, node) - f * dt -
                                 sol.k_incr.at(k, i, node) + comp;
                worst = std::max(worst, std::fabs(r));
            }
    }
    return worst;
}

// ============================================================================
// Simulation-engine backward solver (regression / Monte Carlo)
// ============================================================================

struct LsmcOptions {
    BasisSpec basis;
    int stderr_batches = 8;
    bool store_u = false;
    bool store_fits = true;
};

namespace detail {

struct LsmcPassResult {
    double y0 = 0;
    double violation = 0;
    double k_sup = 0;
};

/// One full backward pass over a contiguous path range. When `out` is given
/// the per-path values, jump components and fits are stored there. Per-path
/// work runs under parallel_for into preallocated slots; every reduction
/// walks paths in index order, so results are independent of thread count.
inline LsmcPassResult lsmc_backward_pass(const ConstrainedBsde& eq, double penalty,
                                         const ModeSet& modes, const StateBox& box,
                                         const std::vector<PathBundle>& paths, std::size_t begin,
                                         std::size_t end, const LsmcOptions& opt,
                                         BackwardSolution* out) {
    const auto& grid = paths.front().grid;
    const int N = grid.steps, m = modes.count, d = paths.front().dim;
    const double dt = grid.dt();
    const auto& lambda = modes.intensity;
    const ConstraintSpec* con = eq.constraint ? &*eq.constraint : nullptr;
    const bool need_u = eq.driver.depends_on_u();
    const bool need_z = eq.driver.depends_on_z();
    const std::size_t P = end - begin;
    const BasisExpansion exp(opt.basis, d);

    std::vector<int> members(P);
    for (std::size_t p = 0; p < P; ++p) members[p] = static_cast<int>(begin + p);

    LsmcPassResult res;
    std::vector<double> value(P), value_next(P), ktotal(P, 0.0), viol(P, 0.0);

    // terminal condition at the realized terminal regime
    auto design_next = build_step_design(paths, members, N, exp, m);
    parallel_for(P, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> xcl(static_cast<std::size_t>(d));
        for (std::size_t p = lo; p < hi; ++p) {
            const auto& path = paths[begin + p];
            const auto x = path.state_at(N);
            xcl.assign(x.begin(), x.end());
            box.clamp(xcl);
            value[p] = eq.terminal.eval(grid.horizon, path.regime[static_cast<std::size_t>(N)], xcl);
        }
    });
    ModeFits value_fits = fit_strata_design(exp, design_next, value, m);
    std::vector<std::vector<double>> k_steps;  // increment per step
    if (out) {
        out->y_paths.assign(static_cast<std::size_t>(N) + 1, {});
        if (opt.store_u) out->u_paths.assign(static_cast<std::size_t>(N) + 1, {});
        if (opt.store_fits) out->fits.assign(static_cast<std::size_t>(N) + 1, {});
        out->y_paths[static_cast<std::size_t>(N)] = value;
        if (opt.store_u)
            out->u_paths[static_cast<std::size_t>(N)] =
                std::vector<double>(P * static_cast<std::size_t>(m), 0.0);
        if (opt.store_fits) out->fits[static_cast<std::size_t>(N)] = value_fits;
        k_steps.assign(static_cast<std::size_t>(N), std::vector<double>(P, 0.0));
    }

    std::vector<double> resp(P);
    std::vector<double> ustep;

    for (int k = N - 1; k >= 0; --k) {
        const double t = grid.t(k);
        const auto design = build_step_design(paths, members, k, exp, m);

        // Jump-corrected regression responses: subtracting the realized mark
        // jumps (read off the time-(k+1) per-regime predictors) leaves a
        // response whose stratum conditional mean is the frozen-regime
        // continuation -- the realized jump integral and its compensator
        // cancel against the regime part of the augmented kernel.
        parallel_for(P, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t p = lo; p < hi; ++p) {
                const auto& path = paths[begin + p];
                double r = value[p];
                const auto [mlo, mhi] = path.marks_in_step(k);
                int pre = path.regime[static_cast<std::size_t>(k)];
                for (std::size_t q = mlo; q < mhi; ++q) {
                    const int a = path.marks[q].mark;
                    if (a != pre)
                        r -= predict_design(value_fits, design, p, a) -
                             predict_design(value_fits, design, p, pre);
                    pre = a;
                }
                resp[p] = r;
            }
        });
        ModeFits cont_fits = fit_strata_design(exp, design, resp, m);
        // A regime nobody occupies at t_k has no stratum to regress on; its
        // continuation falls back to the time-(k+1) value predictor.
        for (int j = 0; j < m; ++j)
            if (design.strata[static_cast<std::size_t>(j)].empty())
                cont_fits.per_mode[static_cast<std::size_t>(j)] =
                    value_fits.per_mode[static_cast<std::size_t>(j)];

        // Brownian integrand per regime when the driver needs it.
        std::vector<ModeFits> z_dims;
        if (need_z) {
            z_dims.resize(static_cast<std::size_t>(d));
            std::vector<double> zr(P);
            for (int w = 0; w < d; ++w) {
                for (std::size_t p = 0; p < P; ++p)
                    zr[p] = value[p] * paths[begin + p].dw_at(k)[static_cast<std::size_t>(w)] / dt;
                z_dims[static_cast<std::size_t>(w)] = fit_strata_design(exp, design, zr, m);
            }
        }

        if (out && opt.store_u) ustep.assign(P * static_cast<std::size_t>(m), 0.0);
        parallel_for(P, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> cont(static_cast<std::size_t>(m)), yv(static_cast<std::size_t>(m)),
                dk(static_cast<std::size_t>(m)), ubar(static_cast<std::size_t>(m)),
                zi(static_cast<std::size_t>(d)), xcl(static_cast<std::size_t>(d));
            for (std::size_t p = lo; p < hi; ++p) {
                const auto& path = paths[begin + p];
                const int cur = path.regime[static_cast<std::size_t>(k)];
                for (int j = 0; j < m; ++j)
                    cont[static_cast<std::size_t>(j)] = predict_design(cont_fits, design, p, j);
                const auto x = path.state_at(k);
                xcl.assign(x.begin(), x.end());
                box.clamp(xcl);
                if (need_z)
                    for (int w = 0; w < d; ++w)
                        zi[static_cast<std::size_t>(w)] =
                            predict_design(z_dims[static_cast<std::size_t>(w)], design, p, cur);

                auto f_dt = [&](int i, double yh, std::span<const double>) {
                    if (need_u)
                        for (int j = 0; j < m; ++j)
                            ubar[static_cast<std::size_t>(j)] = cont[static_cast<std::size_t>(j)] -
                                                                cont[static_cast<std::size_t>(i)];
                    return dt * eq.driver.eval(t, i, xcl, yh, zi,
                                               need_u ? std::span<const double>(ubar)
                                                      : std::span<const double>(),
                                               lambda);
                };
                auto kink = [&](int i, int j, double yj) { return con->kink(t, i, j, yj); };
                auto beta = [&](int, int j) {
                    return penalty * lambda[static_cast<std::size_t>(j)] * dt *
                           (con ? con->slope() : 0.0);
                };
                step::solve_mode_system(m, f_dt, kink, beta, step::AllTargets{m}, cont, yv, dk,
                                        con != nullptr && penalty > 0);

                value_next[p] = yv[static_cast<std::size_t>(cur)];
                ktotal[p] += dk[static_cast<std::size_t>(cur)];
                if (out) k_steps[static_cast<std::size_t>(k)][p] = dk[static_cast<std::size_t>(cur)];
                if (con) {
                    double s = 0;
                    for (int j = 0; j < m; ++j) {
                        if (j == cur) continue;
                        const double u =
                            yv[static_cast<std::size_t>(j)] - yv[static_cast<std::size_t>(cur)];
                        const double h = con->value(t, cur, j, yv[static_cast<std::size_t>(cur)], u);
                        const double hm = std::max(0.0, -h);
                        s += lambda[static_cast<std::size_t>(j)] * hm * hm;
                    }
                    viol[p] += s * dt;
                }
                if (out && opt.store_u)
                    for (int j = 0; j < m; ++j)
                        ustep[p * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] =
                            yv[static_cast<std::size_t>(j)] - yv[static_cast<std::size_t>(cur)];
            }
        });
        value.swap(value_next);
        value_fits = fit_strata_design(exp, design, value, m);
        if (out) {
            out->y_paths[static_cast<std::size_t>(k)] = value;
            if (opt.store_u) out->u_paths[static_cast<std::size_t>(k)] = ustep;
            if (opt.store_fits) out->fits[static_cast<std::size_t>(k)] = value_fits;
        }
    }
    for (double v : viol) res.violation += v;
    res.violation /= static_cast<double>(P);
    if (out) {
        // forward cumulative K with K_0 = 0
        out->k_cum.assign(static_cast<std::size_t>(N) + 1, std::vector<double>(P, 0.0));
        for (int k = 0; k < N; ++k)
            for (std::size_t p = 0; p < P; ++p)
                out->k_cum[static_cast<std::size_t>(k) + 1][p] =
                    out->k_cum[static_cast<std::size_t>(k)][p] +
                    k_steps[static_cast<std::size_t>(k)][p];
    }
    double mean = 0;
    for (double v : value) mean += v;
    res.y0 = mean / static_cast<double>(P);
    for (double kk : ktotal) res.k_sup = std::max(res.k_sup, std::fabs(kk));
    return res;
}

}  // namespace detail

/// Penalized backward solve on simulated paths. The reported standard error
/// comes from rerunning the full backward pass on fixed contiguous path
/// batches (batch-means estimate of the regression estimator's noise).
inline BackwardSolution solve_penalized_lsmc(const ConstrainedBsde& eq, double penalty,
                                             const ModeSet& modes, const StateBox& box,
                                             const std::vector<PathBundle>& paths,
                                             const LsmcOptions& opt) {
    if (paths.empty()) throw MalformedSpec("solve_penalized_lsmc: no paths");
    BackwardSolution sol;
    sol.engine = EngineKind::Lsmc;
    sol.path_count = static_cast<int>(paths.size());
    sol.basis = opt.basis;
    const auto res =
        detail::lsmc_backward_pass(eq, penalty, modes, box, paths, 0, paths.size(), opt, &sol);
    sol.y0 = res.y0;
    const int B = std::max(2, opt.stderr_batches);
    if (paths.size() >= static_cast<std::size_t>(4 * B)) {
        std::vector<double> batch_y0;
        const std::size_t chunk = paths.size() / static_cast<std::size_t>(B);
        for (int b = 0; b < B; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * chunk;
            const std::size_t hi = b + 1 == B ? paths.size() : lo + chunk;
            LsmcOptions thin = opt;
            thin.store_u = false;
            thin.store_fits = false;
            batch_y0.push_back(
                detail::lsmc_backward_pass(eq, penalty, modes, box, paths, lo, hi, thin, nullptr)
                    .y0);
        }
        const auto ms = mean_stderr(batch_y0);
        sol.y0_stderr = ms.std_error;
    }
    return sol;
}

inline BackwardSolution solve_bsde_lsmc(const DriverSpec& driver, const TerminalSpec& terminal,
                                        const ModeSet& modes, const StateBox& box,
                                        const std::vector<PathBundle>& paths,
                                        const LsmcOptions& opt) {
    ConstrainedBsde eq{driver, std::nullopt, terminal};
    return solve_penalized_lsmc(eq, 0.0, modes, box, paths, opt);
}

// ============================================================================
// Penalization ladder
// ============================================================================

struct PenalizationReport {
    std::vector<double> schedule;
    std::vector<double> y0;
    std::vector<double> violation;
    std::vector<double> k_sup;
    std::vector<bool> monotone_flags;  // level vs previous level
    bool monotone = true;
    bool converged = false;
    double gap = std::numeric_limits<double>::quiet_NaN();
    double tol = 0;
};

struct LadderResult {
    BackwardSolution solution;
    PenalizationReport report;
    std::vector<BackwardSolution> levels;  // lattice engine only
    bool exhausted() const { return !report.converged; }
};

inline std::vector<double> default_schedule(int max_exponent = 14) {
    std::vector<double> s;
    for (int e = 0; e <= max_exponent; ++e) s.push_back(std::ldexp(1.0, e));
    return s;
}

/// Runs the penalized solves along an increasing schedule with shared
/// randomness and stops when both the value gap and the violation norm fall
/// under tol. The last computed solution approximates the minimal solution.
inline LadderResult penalization_ladder_lattice(const ConstrainedBsde& eq, const Lattice& L,
                                                const StateBox& box, int initial_mode,
                                                std::vector<double> schedule, double tol = 1e-3,
                                                bool store_levels = true) {
    if (schedule.empty()) schedule = default_schedule();
    LadderResult out;
    out.report.tol = tol;
    if (!eq.constraint) {
        out.solution = solve_penalized_lattice(eq, 0.0, L, box, initial_mode);
        out.report.schedule = {0.0};
        out.report.y0 = {out.solution.y0};
        out.report.violation = {0.0};
        out.report.k_sup = {0.0};
        out.report.converged = true;
        out.report.gap = 0.0;
        return out;
    }
    const auto rho = L.forward_measure(initial_mode);
    double prev_y0 = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t lvl = 0; lvl < schedule.size(); ++lvl) {
        auto sol = solve_penalized_lattice(eq, schedule[lvl], L, box, initial_mode);
        const double viol = violation_norm_lattice(sol, eq, L, rho);
        double ksup = 0;
        for (int i = 0; i < sol.k_incr.modes; ++i)
            for (int node = 0; node < sol.k_incr.nodes; ++node) {
                double acc = 0;
                for (int k = 0; k < sol.k_incr.times; ++k) acc += sol.k_incr.at(k, i, node);
                ksup = std::max(ksup, acc);
            }
        out.report.schedule.push_back(schedule[lvl]);
        out.report.y0.push_back(sol.y0);
        out.report.violation.push_back(viol);
        out.report.k_sup.push_back(ksup);
        if (lvl > 0) {
            const bool mono = sol.y0 >= prev_y0 - 1e-8;
            out.report.monotone_flags.push_back(mono);
            out.report.monotone = out.report.monotone && mono;
            out.report.gap = std::fabs(sol.y0 - prev_y0);
        }
        prev_y0 = sol.y0;
        const bool last = lvl + 1 == schedule.size();
        if (store_levels || last) out.levels.push_back(sol);
        out.solution = std::move(sol);
        if (lvl > 0 && out.report.gap <= tol && viol <= tol) {
            out.report.converged = true;
            break;
        }
    }
    if (!store_levels) out.levels.clear();
    return out;
}

inline LadderResult penalization_ladder_lsmc(const ConstrainedBsde& eq, const ModeSet& modes,
                                             const StateBox& box,
                                             const std::vector<PathBundle>& paths,
                                             const LsmcOptions& opt,
                                             std::vector<double> schedule,
                                             double stderr_multiple = 3.0,
                                             double tol_floor = 1e-3) {
    if (schedule.empty()) schedule = default_schedule();
    LadderResult out;
    if (!eq.constraint) {
        out.solution = solve_penalized_lsmc(eq, 0.0, modes, box, paths, opt);
        out.report.schedule = {0.0};
        out.report.y0 = {out.solution.y0};
        out.report.violation = {0.0};
        out.report.k_sup = {0.0};
        out.report.converged = true;
        out.report.gap = 0.0;
        out.report.tol = 0.0;
        return out;
    }
    // Noise scale measured once on the first level and floored (a nearly
    // deterministic estimator would otherwise demand an unattainable gap);
    // the final level re-measures for the reported stderr.
    LsmcOptions thin = opt;
    thin.store_u = false;
    thin.store_fits = false;
    double tol = tol_floor;
    {
        const auto pass = detail::lsmc_backward_pass(eq, schedule.front(), modes, box, paths, 0,
                                                     paths.size(), thin, nullptr);
        out.report.schedule.push_back(schedule.front());
        out.report.y0.push_back(pass.y0);
        out.report.violation.push_back(pass.violation);
        out.report.k_sup.push_back(pass.k_sup);
        const int B = 4;
        if (paths.size() >= 4 * B) {
            std::vector<double> batch_y0;
            const std::size_t chunk = paths.size() / B;
            for (int b = 0; b < B; ++b)
                batch_y0.push_back(detail::lsmc_backward_pass(eq, schedule.front(), modes, box,
                                                              paths, b * chunk,
                                                              b + 1 == B ? paths.size()
                                                                         : (b + 1) * chunk,
                                                              thin, nullptr)
                                       .y0);
            tol = std::max(stderr_multiple * mean_stderr(batch_y0).std_error, tol_floor);
        }
    }
    out.report.tol = tol;
    double prev_y0 = out.report.y0.front();
    for (std::size_t lvl = 1; lvl < schedule.size(); ++lvl) {
        const bool last_scheduled = lvl + 1 == schedule.size();
        const auto pass = detail::lsmc_backward_pass(eq, schedule[lvl], modes, box, paths, 0,
                                                     paths.size(), thin, nullptr);
        out.report.schedule.push_back(schedule[lvl]);
        out.report.y0.push_back(pass.y0);
        out.report.violation.push_back(pass.violation);
        out.report.k_sup.push_back(pass.k_sup);
        const bool mono = pass.y0 >= prev_y0 - std::max(tol, 1e-8);  // within noise
        out.report.monotone_flags.push_back(mono);
        out.report.monotone = out.report.monotone && mono;
        out.report.gap = std::fabs(pass.y0 - prev_y0);
        prev_y0 = pass.y0;
        if ((out.report.gap <= tol && pass.violation <= std::max(tol, 1e-6)) || last_scheduled) {
            out.report.converged = out.report.gap <= tol;
            out.solution = solve_penalized_lsmc(eq, schedule[lvl], modes, box, paths, opt);
            break;
        }
    }
    return out;
}

// ============================================================================
// Comparison check
// ============================================================================

struct ComparisonVerdict {
    bool ok = false;
    bool precondition_ok = true;
    double max_excess = 0;  // max over nodes of Y1 - Y2
    std::string detail;
};

/// Pathwise comparison of two backward solves on the lattice engine:
/// Y1 <= Y2 + tol at every (time, regime, node), provided the terminal
/// ordering, the driver ordering along run 1's solution, and run 2's jump
/// monotonicity certificate all hold.
inline ComparisonVerdict check_comparison(const DriverSpec& f1, const TerminalSpec& xi1,
                                          const DriverSpec& f2, const TerminalSpec& xi2,
                                          const Lattice& L, const StateBox& box, int initial_mode,
                                          double tol = 1e-8,
                                          const BackwardSolution* sol2_override = nullptr) {
    ComparisonVerdict v;
    if (!f2.jump_monotonicity || !(f2.jump_monotonicity->second >= f2.jump_monotonicity->first &&
                                   f2.jump_monotonicity->first > -1.0)) {
        v.precondition_ok = false;
        v.detail = "run 2 driver lacks a valid jump monotonicity certificate";
        return v;
    }
    const int m = L.modes().count, nodes = L.node_count(), d = L.dim();
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = 0; i < m; ++i)
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            const auto xc = box.clamped(x);
            if (xi1.eval(L.grid().horizon, i, xc) > xi2.eval(L.grid().horizon, i, xc) + 1e-12) {
                v.precondition_ok = false;
                v.detail = "terminal ordering xi1 <= xi2 fails";
                return v;
            }
        }
    const auto sol1 = solve_bsde_lattice(f1, xi1, L, box, initial_mode);
    BackwardSolution sol2_local;
    const BackwardSolution* sol2 = sol2_override;
    if (!sol2) {
        sol2_local = solve_bsde_lattice(f2, xi2, L, box, initial_mode);
        sol2 = &sol2_local;
    }
    // driver ordering along run 1's solution
    std::vector<double> u(static_cast<std::size_t>(m)), zi(static_cast<std::size_t>(d));
    for (int k = 0; k < L.grid().steps; ++k) {
        const double t = L.grid().t(k);
        for (int i = 0; i < m; ++i)
            for (int node = 0; node < nodes; ++node) {
                L.node_state(node, x);
                const auto xc = box.clamped(x);
                for (int j = 0; j < m; ++j) u[static_cast<std::size_t>(j)] = sol1.u_lattice(k, i, node, j);
                for (int w = 0; w < d; ++w) zi[static_cast<std::size_t>(w)] = sol1.z.at(k, i, node, w);
                const double y1 = sol1.y.at(k, i, node);
                if (f1.eval(t, i, xc, y1, zi, u, L.modes().intensity) >
                    f2.eval(t, i, xc, y1, zi, u, L.modes().intensity) + 1e-12) {
                    v.precondition_ok = false;
                    v.detail = "driver ordering f1 <= f2 fails along run 1";
                    return v;
                }
            }
    }
    v.ok = true;
    for (int k = 0; k <= L.grid().steps; ++k)
        for (int i = 0; i < m; ++i)
            for (int node = 0; node < nodes; ++node) {
                const double excess = sol1.y.at(k, i, node) - sol2->y.at(k, i, node);
                v.max_excess = std::max(v.max_excess, excess);
                if (excess > tol && v.ok) {
                    v.ok = false;
                    v.detail = "Y1 > Y2 + tol at k=" + std::to_string(k) +
                               " i=" + std::to_string(i + 1) + " node=" + std::to_string(node);
                }
            }
    return v;
}

}  // namespace cbsde
