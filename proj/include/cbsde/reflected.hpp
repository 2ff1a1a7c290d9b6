#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cbsde/bsde.hpp"
#include "cbsde/lattice.hpp"
#include "cbsde/lsmc.hpp"
#include "cbsde/model.hpp"
#include "cbsde/step_core.hpp"

namespace cbsde {

/// Solution of the m-component obliquely reflected system: per-regime value,
/// Brownian integrand surrogate, reflection increments and the realized
/// barrier max_{j in A_i} h_ij(t, Y_j).
struct ReflectedSolution {
    EngineKind engine = EngineKind::Lattice;
    int m = 0;

    // lattice payload
    LatticeField y, z, k_incr, barrier;
    std::vector<LatticeField> rounds;  // Picard route: value after each round
    int rounds_used = 0;
    bool converged = true;

    // simulation payload: one frozen-regime path family per component,
    // common driving noise across families.
    std::vector<std::vector<PathBundle>> families;        // [i][p]
    std::vector<std::vector<std::vector<double>>> y_fam;  // [k][i][p]
    std::vector<ModeFits> fits;                           // per k, per-regime predictors
    BasisSpec basis;
    std::vector<double> y0_by_mode;

    double y0(int i, const Lattice* L = nullptr) const {
        if (engine == EngineKind::Lattice) return y.at(0, i, L ? L->origin_node() : 0);
        return y0_by_mode[static_cast<std::size_t>(i)];
    }
};

namespace detail {

inline void fill_barrier_lattice(const ObliqueSystemSpec& sys, const Lattice& L,
                                 ReflectedSolution& sol) {
    const int N = L.grid().steps, m = sys.modes.count, nodes = L.node_count();
    sol.barrier = LatticeField(N + 1, m, nodes);
    for (int k = 0; k <= N; ++k) {
        const double t = L.grid().t(k);
        for (int i = 0; i < m; ++i) {
            const auto targets = sys.targets(i);
            for (int node = 0; node < nodes; ++node) {
                double b = -std::numeric_limits<double>::infinity();
                for (int j : targets)
                    b = std::max(b, sys.barrier_map(t, i, j, sol.y.at(k, j, node)));
                sol.barrier.at(k, i, node) = b;
            }
        }
    }
}

}  // namespace detail

/// Penalized route on the lattice: the coupled system with penalty
/// n [Y_i - h_ij(t, Y_j)]^- lambda_j, regimes coupled per node through the
/// same implicit sweeps as the constrained solver.
inline ReflectedSolution solve_oblique_penalized(const ObliqueSystemSpec& sys, double penalty,
                                                 const Lattice& L) {
    const int N = L.grid().steps, m = sys.modes.count, nodes = L.node_count(), d = sys.dim;
    const double dt = L.grid().dt();
    ReflectedSolution sol;
    sol.engine = EngineKind::Lattice;
    sol.m = m;
    sol.y = LatticeField(N + 1, m, nodes);
    sol.z = LatticeField(N + 1, m, nodes, d);
    sol.k_incr = LatticeField(N + 1, m, nodes);

    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = 0; i < m; ++i)
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            sol.y.at(N, i, node) = sys.terminal.eval_scalar(sys.horizon, i, sys.box.clamped(x));
        }

    std::vector<double> cont(static_cast<std::size_t>(m)), yv(static_cast<std::size_t>(m)),
        dk(static_cast<std::size_t>(m));
    std::vector<double> zrow(static_cast<std::size_t>(m) * std::max(1, d));
    std::vector<std::vector<int>> targets(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) targets[static_cast<std::size_t>(i)] = sys.targets(i);

    for (int k = N - 1; k >= 0; --k) {
        const double t = L.grid().t(k);
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            const auto xc = sys.box.clamped(x);
            for (int i = 0; i < m; ++i) {
                const auto st = L.stencil(t, i, node);
                cont[static_cast<std::size_t>(i)] = L.expect_frozen(st, sol.y.slice(k + 1, i));
                L.gradient_z(t, i, node, sol.y.slice(k + 1, i),
                             std::span<double>(zrow.data() + static_cast<std::size_t>(i) * d,
                                               static_cast<std::size_t>(d)));
            }
            auto f_dt = [&](int i, double yh, std::span<const double> y_all) {
                // implicit own component, current sweep values of the others
                double v = sys.driver_base.eval_scalar(t, i, xc);
                if (!sys.couplings.empty()) {
                    const auto& cp = sys.couplings[static_cast<std::size_t>(i)];
                    for (std::size_t j = 0; j < cp.y_coef.size(); ++j)
                        v += cp.y_coef[j] *
                             (static_cast<int>(j) == i ? yh : y_all[j]);
                    for (std::size_t w = 0; w < cp.z_coef.size() && w < static_cast<std::size_t>(d); ++w)
                        v += cp.z_coef[w] * zrow[static_cast<std::size_t>(i) * d + w];
                }
                return dt * v;
            };
            auto kink = [&](int i, int j, double yj) { return sys.barrier_map(t, i, j, yj); };
            auto beta = [&](int, int j) {
                return penalty * sys.modes.intensity[static_cast<std::size_t>(j)] * dt;
            };
            auto tgt = [&](int i) -> const std::vector<int>& {
                return targets[static_cast<std::size_t>(i)];
            };
            step::solve_mode_system(m, f_dt, kink, beta, tgt, cont, yv, dk, penalty > 0);
            for (int i = 0; i < m; ++i) {
                sol.y.at(k, i, node) = yv[static_cast<std::size_t>(i)];
                sol.k_incr.at(k, i, node) = dk[static_cast<std::size_t>(i)];
                for (int w = 0; w < d; ++w)
                    sol.z.at(k, i, node, w) = zrow[static_cast<std::size_t>(i * d + w)];
            }
        }
    }
    detail::fill_barrier_lattice(sys, L, sol);
    return sol;
}

/// Iterated single-barrier route on the lattice: round r solves m
/// independent reflected equations against barriers built from round r-1
/// values at the same time index; round 0 is the unreflected solve. After
/// the sup-change stops, a final obstacle polish enforces Y_i >= barrier
/// exactly at every node.
inline ReflectedSolution solve_oblique_picard(const ObliqueSystemSpec& sys, const Lattice& L,
                                              int max_rounds = 64, double round_tol = 1e-12,
                                              bool store_rounds = true) {
    const int N = L.grid().steps, m = sys.modes.count, nodes = L.node_count(), d = sys.dim;
    const double dt = L.grid().dt();
    ReflectedSolution sol;
    sol.engine = EngineKind::Lattice;
    sol.m = m;
    sol.z = LatticeField(N + 1, m, nodes, d);
    std::vector<std::vector<int>> targets(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) targets[static_cast<std::size_t>(i)] = sys.targets(i);

    LatticeField prev(N + 1, m, nodes), cur(N + 1, m, nodes), kinc(N + 1, m, nodes);
    std::vector<double> x(static_cast<std::size_t>(d));

    auto one_round = [&](const LatticeField* barrier_src, LatticeField& out, LatticeField& kout) {
        for (int i = 0; i < m; ++i)
            for (int node = 0; node < nodes; ++node) {
                L.node_state(node, x);
                out.at(N, i, node) = sys.terminal.eval_scalar(sys.horizon, i, sys.box.clamped(x));
            }
        std::vector<double> zi(static_cast<std::size_t>(d));
        for (int k = N - 1; k >= 0; --k) {
            const double t = L.grid().t(k);
            for (int i = 0; i < m; ++i) {
                auto next = out.slice(k + 1, i);
                for (int node = 0; node < nodes; ++node) {
                    L.node_state(node, x);
                    const auto xc = sys.box.clamped(x);
                    const auto st = L.stencil(t, i, node);
                    const double cont = L.expect_frozen(st, next);
                    L.gradient_z(t, i, node, next, zi);
                    // implicit in the own component only
                    double yh = cont, yn = cont;
                    for (int it = 0; it < step::kMaxPicard; ++it) {
                        double f = sys.driver_base.eval_scalar(t, i, xc);
                        if (!sys.couplings.empty()) {
                            const auto& cp = sys.couplings[static_cast<std::size_t>(i)];
                            for (std::size_t j = 0; j < cp.y_coef.size(); ++j)
                                f += cp.y_coef[j] * (static_cast<int>(j) == i
                                                         ? yh
                                                         : (barrier_src ? barrier_src->at(k, static_cast<int>(j), node)
                                                                        : out.at(k + 1, static_cast<int>(j), node)));
                            for (std::size_t w = 0; w < cp.z_coef.size() && w < zi.size(); ++w)
                                f += cp.z_coef[w] * zi[w];
                        }
                        yn = cont + dt * f;
                        if (std::fabs(yn - yh) <= 1e-14 * (1 + std::fabs(yn))) break;
                        yh = yn;
                        if (it + 1 == step::kMaxPicard)
                            throw NoConvergence("picard round: implicit step failed");
                    }
                    double b = -std::numeric_limits<double>::infinity();
                    if (barrier_src)
                        for (int j : targets[static_cast<std::size_t>(i)])
                            b = std::max(b, sys.barrier_map(t, i, j, barrier_src->at(k, j, node)));
                    const double val = std::max(yn, b);
                    out.at(k, i, node) = val;
                    kout.at(k, i, node) = std::max(0.0, val - yn);
                    for (int w = 0; w < d; ++w) sol.z.at(k, i, node, w) = zi[static_cast<std::size_t>(w)];
                }
            }
        }
    };

    one_round(nullptr, prev, kinc);  // round 0: unreflected, K = 0
    if (store_rounds) sol.rounds.push_back(prev);
    sol.rounds_used = 0;
    sol.converged = false;
    for (int r = 1; r <= max_rounds; ++r) {
        one_round(&prev, cur, kinc);
        double change = 0;
        for (std::size_t q = 0; q < cur.v.size(); ++q)
            change = std::max(change, std::fabs(cur.v[q] - prev.v[q]));
        prev = cur;
        if (store_rounds) sol.rounds.push_back(cur);
        sol.rounds_used = r;
        if (change <= round_tol) {
            sol.converged = true;
            break;
        }
        if (r == max_rounds)
            throw IterationLimit("solve_oblique_picard: round limit reached without convergence");
    }
    sol.y = prev;
    sol.k_incr = kinc;
    // obstacle polish: the fixed point satisfies the barrier built from its
    // own values; enforce it exactly (at most m sweeps by the chain condition)
    for (int k = 0; k < N; ++k) {
        const double t = L.grid().t(k);
        for (int sweep = 0; sweep <= m; ++sweep) {
            bool changed = false;
            for (int i = 0; i < m; ++i)
                for (int node = 0; node < nodes; ++node) {
                    double b = -std::numeric_limits<double>::infinity();
                    for (int j : targets[static_cast<std::size_t>(i)])
                        b = std::max(b, sys.barrier_map(t, i, j, sol.y.at(k, j, node)));
                    if (b > sol.y.at(k, i, node)) {
                        sol.k_incr.at(k, i, node) += b - sol.y.at(k, i, node);
                        sol.y.at(k, i, node) = b;
                        changed = true;
                    }
                }
            if (!changed) break;
        }
    }
    detail::fill_barrier_lattice(sys, L, sol);
    return sol;
}

/// Identification of the one-dimensional constrained quadruple from the
/// reflected family: the value follows the current regime's component, the
/// jump component is the cross-regime value difference, and the compensator
/// aggregates the per-regime reflection increments. On the lattice the
/// identification is exact per node.
inline BackwardSolution identify_constrained(const ReflectedSolution& refl, const Lattice& L,
                                             int initial_mode) {
    if (refl.engine != EngineKind::Lattice)
        throw MalformedSpec("identify_constrained: lattice solution required");
    BackwardSolution out;
    out.engine = EngineKind::Lattice;
    out.y = refl.y;
    out.z = refl.z;
    out.k_incr = refl.k_incr;
    out.y0 = refl.y.at(0, initial_mode, L.origin_node());
    return out;
}

/// Max violation of the jump constraint by the identified solution:
/// max over (k, i, node, j) of (h_ij(t, Y_j) - Y_i)^+ .
inline double identification_constraint_violation(const ReflectedSolution& refl,
                                                  const ObliqueSystemSpec& sys, const Lattice& L) {
    double worst = 0;
    for (int k = 0; k <= L.grid().steps; ++k) {
        const double t = L.grid().t(k);
        for (int i = 0; i < sys.modes.count; ++i)
            for (int node = 0; node < L.node_count(); ++node)
                for (int j : sys.targets(i))
                    worst = std::max(worst, sys.barrier_map(t, i, j, refl.y.at(k, j, node)) -
                                                refl.y.at(k, i, node));
    }
    return worst;
}

/// Discrete flat-off defect: max over (i, node) of
/// sum_k (Y_i - barrier_i) dK_i at time k.
inline double skorokhod_defect(const ReflectedSolution& refl, const Lattice& L) {
    double worst = 0;
    for (int i = 0; i < refl.m; ++i)
        for (int node = 0; node < L.node_count(); ++node) {
            double acc = 0;
            for (int k = 0; k < L.grid().steps; ++k) {
                const double gap = refl.y.at(k, i, node) - refl.barrier.at(k, i, node);
                acc += std::max(0.0, gap) * refl.k_incr.at(k, i, node);
            }
            worst = std::max(worst, acc);
        }
    return worst;
}

// ============================================================================
// Simulation-engine oblique solves (frozen-regime path families)
// ============================================================================

/// Simulates one frozen-regime family per component with common driving
/// noise (same seed and path keys across families).
inline std::vector<std::vector<PathBundle>> simulate_families(const ObliqueSystemSpec& sys,
                                                              const TimeGrid& grid, int count,
                                                              std::uint64_t seed) {
    SwitchingProblem proxy;
    proxy.modes = sys.modes;
    proxy.dim = sys.dim;
    proxy.x0 = sys.x0;
    proxy.horizon = sys.horizon;
    proxy.drift = sys.drift;
    proxy.vol = sys.vol;
    proxy.running_profit = CoefficientSpec::constant(1, sys.dim, sys.modes.count, 0.0);
    proxy.terminal_profit = proxy.running_profit;
    proxy.cost = CostSpec::uniform(sys.modes.count, -1.0);
    proxy.bounds = {0, 0, 1};
    proxy.box = sys.box;
    std::vector<std::vector<PathBundle>> fam(static_cast<std::size_t>(sys.modes.count));
    for (int i = 0; i < sys.modes.count; ++i) {
        Strategy stay;
        stay.initial_mode = i;
        fam[static_cast<std::size_t>(i)] = simulate_controlled(proxy, stay, grid, count, seed);
    }
    return fam;
}

/// Penalized route on frozen-regime path families. The cross-component
/// barrier values come from per-family fitted predictors, iterated to a
/// functional fixed point within every time step.
inline ReflectedSolution solve_oblique_penalized_lsmc(const ObliqueSystemSpec& sys, double penalty,
                                                      const std::vector<std::vector<PathBundle>>& fam,
                                                      const BasisSpec& basis) {
    const int m = sys.modes.count, d = sys.dim;
    const auto& grid = fam.front().front().grid;
    const int N = grid.steps;
    const double dt = grid.dt();
    const std::size_t P = fam.front().size();

    ReflectedSolution sol;
    sol.engine = EngineKind::Lsmc;
    sol.m = m;
    sol.basis = basis;
    sol.y_fam.assign(static_cast<std::size_t>(N) + 1,
                     std::vector<std::vector<double>>(static_cast<std::size_t>(m),
                                                      std::vector<double>(P, 0.0)));
    sol.fits.assign(static_cast<std::size_t>(N) + 1, {});

    auto fit_component = [&](int k, int i, const std::vector<double>& values) {
        std::vector<std::vector<double>> inputs(P);
        for (std::size_t p = 0; p < P; ++p)
            inputs[p] = regression_input(fam[static_cast<std::size_t>(i)][p], k, basis);
        return RegressionOperator::fit(basis, d, inputs, values);
    };

    for (int i = 0; i < m; ++i)
        for (std::size_t p = 0; p < P; ++p) {
            const auto x = fam[static_cast<std::size_t>(i)][p].state_at(N);
            sol.y_fam[static_cast<std::size_t>(N)][static_cast<std::size_t>(i)][p] =
                sys.terminal.eval_scalar(sys.horizon, i, sys.box.clamped(x));
        }
    sol.fits[static_cast<std::size_t>(N)].per_mode.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
        sol.fits[static_cast<std::size_t>(N)].per_mode[static_cast<std::size_t>(i)] =
            fit_component(N, i, sol.y_fam[static_cast<std::size_t>(N)][static_cast<std::size_t>(i)]);

    std::vector<std::vector<double>> cont(static_cast<std::size_t>(m), std::vector<double>(P));
    for (int k = N - 1; k >= 0; --k) {
        const double t = grid.t(k);
        // per-component continuation within its own family
        for (int i = 0; i < m; ++i) {
            std::vector<std::vector<double>> inputs(P);
            for (std::size_t p = 0; p < P; ++p)
                inputs[p] = regression_input(fam[static_cast<std::size_t>(i)][p], k, basis);
            auto op = RegressionOperator::fit(
                basis, d, inputs, sol.y_fam[static_cast<std::size_t>(k) + 1][static_cast<std::size_t>(i)]);
            for (std::size_t p = 0; p < P; ++p)
                cont[static_cast<std::size_t>(i)][p] = op.predict(inputs[p]);
        }
        // functional sweeps: refit predictors, resolve the penalty per path
        auto cur = cont;
        ModeFits fits;
        fits.per_mode.resize(static_cast<std::size_t>(m));
        for (int sweep = 0; sweep < 20; ++sweep) {
            for (int i = 0; i < m; ++i)
                fits.per_mode[static_cast<std::size_t>(i)] =
                    fit_component(k, i, cur[static_cast<std::size_t>(i)]);
            double change = 0;
            for (int i = 0; i < m; ++i) {
                const auto targets = sys.targets(i);
                for (std::size_t p = 0; p < P; ++p) {
                    const auto in = regression_input(fam[static_cast<std::size_t>(i)][p], k, basis);
                    const auto x = fam[static_cast<std::size_t>(i)][p].state_at(k);
                    const auto xc = sys.box.clamped(x);
                    double base = sys.driver_base.eval_scalar(t, i, xc);
                    double a = cont[static_cast<std::size_t>(i)][p] + dt * base;
                    std::vector<double> bs, ds;
                    for (int j : targets) {
                        bs.push_back(penalty * sys.modes.intensity[static_cast<std::size_t>(j)] * dt);
                        ds.push_back(sys.barrier_map(
                            t, i, j, fits.per_mode[static_cast<std::size_t>(j)].predict(in)));
                    }
                    const double yn = penalty > 0 ? step::kink_solve(a, bs, ds) : a;
                    change = std::max(change, std::fabs(yn - cur[static_cast<std::size_t>(i)][p]));
                    cur[static_cast<std::size_t>(i)][p] = yn;
                }
            }
            if (change <= 1e-10) break;
        }
        sol.y_fam[static_cast<std::size_t>(k)] = cur;
        sol.fits[static_cast<std::size_t>(k)] = fits;
    }
    sol.y0_by_mode.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double s = 0;
        for (double v : sol.y_fam[0][static_cast<std::size_t>(i)]) s += v;
        sol.y0_by_mode[static_cast<std::size_t>(i)] = s / static_cast<double>(P);
    }
    return sol;
}

}  // namespace cbsde
