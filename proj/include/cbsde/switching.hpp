#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cbsde/bsde.hpp"
#include "cbsde/lattice.hpp"
#include "cbsde/model.hpp"
#include "cbsde/parallel.hpp"
#include "cbsde/reflected.hpp"
#include "cbsde/simulate.hpp"
#include "cbsde/stats.hpp"

namespace cbsde {

struct PayoffEstimate {
    double mean = 0;
    double std_error = 0;
    long long count = 0;
};

inline double strategy_cost_total(const SwitchingProblem& p, const Strategy& s) {
    double acc = 0;
    int cur = s.initial_mode;
    for (const auto& [tau, to] : s.switches) {
        acc += p.c(tau, cur, to);
        cur = to;
    }
    return acc;
}

/// Monte Carlo estimate of the total profit of a finite impulse strategy:
/// terminal profit plus the running-profit integral (exact sub-steps at the
/// switch times) plus the switching costs.
inline PayoffEstimate evaluate_strategy(const SwitchingProblem& p, const Strategy& s,
                                        const TimeGrid& grid, int count, std::uint64_t seed) {
    s.validate(grid.horizon, p.modes.count);
    std::vector<double> payoff(static_cast<std::size_t>(count));
    const double costs = strategy_cost_total(p, s);
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double running = 0;
            auto path = detail::controlled_one(p, s, grid, seed, i, &running);
            const int iT = path.regime[static_cast<std::size_t>(grid.steps)];
            payoff[i] = p.g(iT, path.state_at(grid.steps)) + running + costs;
        }
    });
    const auto ms = mean_stderr(payoff);
    return {ms.mean, ms.std_error, ms.count};
}

namespace detail {

/// Per-regime value lookup (t_k, x) -> Y_j used by the extractors. Lattice
/// values are interpolated multilinearly.
struct ValueView {
    const LatticeField* values;
    const Lattice* lattice;
    double at(int k, int j, std::span<const double> x) const {
        return lattice->interpolate(values->slice(k, j), x);
    }
};

/// Greedy barrier walk shared by the extractors; `binding` decides whether
/// regime i must switch at (k, x) and returns the target regime.
template <class Binding>
Strategy barrier_walk(const SwitchingProblem& p, const TimeGrid& grid, Binding&& binding,
                      std::span<const double> x_start, int max_switches) {
    Strategy s;
    s.initial_mode = p.initial_mode;
    std::vector<double> x(x_start.begin(), x_start.end());
    std::vector<double> b(static_cast<std::size_t>(p.dim));
    int cur = p.initial_mode;
    for (int k = 0; k < grid.steps; ++k) {
        const double t = grid.t(k);
        for (int hop = 0; hop < p.modes.count; ++hop) {
            const int to = binding(k, cur, x);
            if (to < 0) break;
            if (static_cast<int>(s.switches.size()) >= max_switches)
                throw NonTerminating("strategy extraction: switch budget exceeded");
            // a same-time second hop replaces the previous switch target
            if (!s.switches.empty() && s.switches.back().first == t)
                s.switches.back().second = to;
            else
                s.switches.emplace_back(t, to);
            cur = to;
        }
        p.eval_drift(t, cur, x, b);
        for (int j = 0; j < p.dim; ++j)
            x[static_cast<std::size_t>(j)] += b[static_cast<std::size_t>(j)] * grid.dt();
    }
    return s;
}

inline int switch_budget(const SwitchingProblem& p) {
    const double ybar = (p.horizon + 1.0) * std::max(p.bounds.psi_bar, p.bounds.g_bar);
    const double cap =
        (p.bounds.psi_bar * p.horizon + p.bounds.g_bar + ybar) / p.bounds.c_bar + 1.0;
    return static_cast<int>(std::ceil(cap)) + 1;
}

}  // namespace detail

/// Optimal strategy from a reflected solution on the lattice, walking the
/// deterministic controlled state (requires a degenerate diffusion; use
/// run_optimal_policy for stochastic instances). Switches where the value
/// touches its barrier, target chosen as the smallest maximizing regime.
inline Strategy extract_optimal_strategy(const ReflectedSolution& refl, const Lattice& L,
                                         const SwitchingProblem& p, const TimeGrid& grid,
                                         double tol_hit = 1e-6) {
    if (p.vol.sup_abs_on(p.box) > 1e-12)
        throw MalformedSpec(
            "extract_optimal_strategy: deterministic walk needs a degenerate diffusion");
    detail::ValueView view{&refl.y, &L};
    const int budget = detail::switch_budget(p);
    auto binding = [&](int k, int cur, const std::vector<double>& x) -> int {
        const double t = grid.t(k);
        const double yi = view.at(k, cur, x);
        double best = -std::numeric_limits<double>::infinity();
        int arg = -1;
        for (int j = 0; j < p.modes.count; ++j) {
            if (j == cur) continue;
            const double v = view.at(k, j, x) + p.c(t, cur, j);
            if (v > best + 1e-15) {
                best = v;
                arg = j;
            }
        }
        return (arg >= 0 && yi <= best + tol_hit) ? arg : -1;
    };
    return detail::barrier_walk(p, grid, binding, p.x0, budget);
}

/// Optimal strategy read off the constrained solution's jump component: the
/// switch time is the first time the jump constraint binds for some target
/// regime (max_j U(j) + c(t, i, j) reaching zero), conditioning on the
/// frozen regime via the per-regime value surfaces.
inline Strategy strategy_from_u(const BackwardSolution& sol, const Lattice& L,
                                const SwitchingProblem& p, const TimeGrid& grid,
                                double tol_hit = 1e-6) {
    if (sol.engine != EngineKind::Lattice)
        throw MalformedSpec("strategy_from_u: lattice solution required");
    if (p.vol.sup_abs_on(p.box) > 1e-12)
        throw MalformedSpec("strategy_from_u: deterministic walk needs a degenerate diffusion");
    detail::ValueView view{&sol.y, &L};
    const int budget = detail::switch_budget(p);
    auto binding = [&](int k, int cur, const std::vector<double>& x) -> int {
        const double t = grid.t(k);
        const double ycur = view.at(k, cur, x);
        double best = -std::numeric_limits<double>::infinity();
        int arg = -1;
        for (int j = 0; j < p.modes.count; ++j) {
            if (j == cur) continue;
            const double u = view.at(k, j, x) - ycur;  // jump component
            const double trigger = u + p.c(t, cur, j);
            if (trigger > best + 1e-15) {
                best = trigger;
                arg = j;
            }
        }
        return (arg >= 0 && best >= -tol_hit) ? arg : -1;
    };
    return detail::barrier_walk(p, grid, binding, p.x0, budget);
}

/// Forward policy execution for stochastic instances: simulate the
/// controlled diffusion, switching whenever the interpolated per-regime
/// values touch the barrier at a grid node. Returns the Monte Carlo payoff
/// of the executed policy and the realized strategy of the first path.
struct PolicyRun {
    PayoffEstimate payoff;
    Strategy first_path_strategy;
};

inline PolicyRun run_optimal_policy(const ReflectedSolution& refl, const Lattice& L,
                                    const SwitchingProblem& p, const TimeGrid& grid, int count,
                                    std::uint64_t seed, double tol_hit = 1e-6) {
    detail::ValueView view{&refl.y, &L};
    const int budget = detail::switch_budget(p);
    std::vector<double> payoff(static_cast<std::size_t>(count));
    std::vector<Strategy> first(1);
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> x(static_cast<std::size_t>(p.dim)), b(static_cast<std::size_t>(p.dim)),
            s(static_cast<std::size_t>(p.dim));
        for (std::size_t pi = lo; pi < hi; ++pi) {
            CounterRng rng(seed, pi);
            RngStream gauss(rng, detail::kStreamGauss);
            x.assign(p.x0.begin(), p.x0.end());
            int cur = p.initial_mode;
            double acc = 0;
            Strategy strat;
            strat.initial_mode = p.initial_mode;
            int switches = 0;
            for (int k = 0; k < grid.steps; ++k) {
                const double t = grid.t(k);
                for (int hop = 0; hop < p.modes.count; ++hop) {
                    const double yi = view.at(k, cur, x);
                    double best = -std::numeric_limits<double>::infinity();
                    int arg = -1;
                    for (int j = 0; j < p.modes.count; ++j) {
                        if (j == cur) continue;
                        const double v = view.at(k, j, x) + p.c(t, cur, j);
                        if (v > best + 1e-15) {
                            best = v;
                            arg = j;
                        }
                    }
                    if (arg < 0 || yi > best + tol_hit) break;
                    if (++switches > budget)
                        throw NonTerminating("policy execution: switch budget exceeded");
                    acc += p.c(t, cur, arg);
                    if (!strat.switches.empty() && strat.switches.back().first == t)
                        strat.switches.back().second = arg;
                    else
                        strat.switches.emplace_back(t, arg);
                    cur = arg;
                }
                acc += p.psi(t, cur, x) * grid.dt();
                p.eval_drift(t, cur, x, b);
                p.eval_vol(t, cur, x, s);
                const double sq = std::sqrt(grid.dt());
                for (int j = 0; j < p.dim; ++j)
                    x[static_cast<std::size_t>(j)] += b[static_cast<std::size_t>(j)] * grid.dt() +
                                                      s[static_cast<std::size_t>(j)] * sq *
                                                          gauss.gaussian();
            }
            acc += p.g(cur, x);
            payoff[pi] = acc;
            if (pi == 0) first[0] = strat;
        }
    });
    const auto ms = mean_stderr(payoff);
    return {{ms.mean, ms.std_error, ms.count}, first[0]};
}

/// Candidate strategies for optimality certification: random switch counts,
/// sorted times, regime path without immediate repeats.
inline std::vector<Strategy> random_strategies(const SwitchingProblem& p, int count,
                                               std::uint64_t seed, int max_switches = 3) {
    std::vector<Strategy> out;
    CounterRng rng(seed, 0xC0FFEEull);
    RngStream u(rng, 7);
    for (int c = 0; c < count; ++c) {
        Strategy s;
        s.initial_mode = p.initial_mode;
        const int k = p.modes.count < 2 ? 0 : u.uniform_int(max_switches + 1);
        std::vector<double> times;
        for (int q = 0; q < k; ++q) times.push_back(u.uniform() * p.horizon);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        int cur = s.initial_mode;
        for (double t : times) {
            int to = u.uniform_int(p.modes.count - 1);
            if (to >= cur) ++to;  // exclude the current regime
            s.switches.emplace_back(t, to);
            cur = to;
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// True iff the candidate payoffs never beat J(s*) beyond three pooled
/// standard errors and J(s*) matches the supplied solver value within
/// y0_tol plus Monte Carlo noise.
inline bool certify_optimality(const SwitchingProblem& p, const Strategy& s_star,
                               const std::vector<Strategy>& candidates, const TimeGrid& grid,
                               int count, std::uint64_t seed, double y0, double y0_tol) {
    const auto star = evaluate_strategy(p, s_star, grid, count, seed);
    for (const auto& cand : candidates) {
        const auto est = evaluate_strategy(p, cand, grid, count, seed);
        const double pooled =
            std::sqrt(star.std_error * star.std_error + est.std_error * est.std_error);
        if (star.mean < est.mean - 3.0 * pooled - 1e-12) return false;
    }
    if (std::fabs(star.mean - y0) > y0_tol + 3.0 * star.std_error) return false;
    return true;
}

}  // namespace cbsde
