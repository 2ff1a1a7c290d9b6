#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "cbsde/model.hpp"
#include "cbsde/parallel.hpp"
#include "cbsde/rng.hpp"

namespace cbsde {

struct TimeGrid {
    double horizon = 1.0;
    int steps = 1;

    double dt() const { return horizon / steps; }
    double t(int k) const { return horizon * k / steps; }
};

struct Mark {
    double time;  // in (0, T]
    int mark;     // regime drawn with probability lambda_j / total
};

/// Impulse strategy: initial regime plus a finite switch sequence. Switch
/// times are non-decreasing from 0 and never exceed the horizon; consecutive
/// target regimes differ.
struct Strategy {
    int initial_mode = 0;
    std::vector<std::pair<double, int>> switches;  // (time, target regime)

    void validate(double horizon, int modes) const {
        if (initial_mode < 0 || initial_mode >= modes)
            throw InvalidStrategy("strategy: initial regime out of range");
        int cur = initial_mode;
        double prev = -1.0;
        for (const auto& [tau, to] : switches) {
            if (to < 0 || to >= modes) throw InvalidStrategy("strategy: regime out of range");
            if (tau < 0.0 || tau > horizon)
                throw InvalidStrategy("strategy: switch time outside [0, T]");
            if (tau <= prev) throw InvalidStrategy("strategy: switch times must increase");
            if (to == cur) throw InvalidStrategy("strategy: switch to current regime");
            prev = tau;
            cur = to;
        }
    }
    int mode_at(double t) const {
        int cur = initial_mode;
        for (const auto& [tau, to] : switches) {
            if (tau <= t) cur = to;
            else break;
        }
        return cur;
    }
};

/// One simulated scenario of the randomized-regime forward system: Brownian
/// increments per grid step, the marked point events, the regime value and
/// the state at every grid node. `feature` carries the running average of the
/// state (the path-feature interface).
struct PathBundle {
    TimeGrid grid;
    int dim = 1;
    std::vector<double> dw;       // steps * dim
    std::vector<Mark> marks;      // ascending times
    std::vector<int> regime;      // steps + 1, value at t_k (right-continuous)
    std::vector<double> state;    // (steps + 1) * dim
    std::vector<double> feature;  // (steps + 1) * dim running average

    std::span<const double> state_at(int k) const {
        return {state.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<const double> feature_at(int k) const {
        return {feature.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<const double> dw_at(int k) const {
        return {dw.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
    }
    /// marks with time in (t_k, t_{k+1}]
    std::pair<std::size_t, std::size_t> marks_in_step(int k) const {
        const double t0 = grid.t(k), t1 = grid.t(k + 1);
        auto lo = std::upper_bound(marks.begin(), marks.end(), t0,
                                   [](double t, const Mark& m) { return t < m.time; });
        auto hi = std::upper_bound(marks.begin(), marks.end(), t1,
                                   [](double t, const Mark& m) { return t < m.time; });
        return {static_cast<std::size_t>(lo - marks.begin()),
                static_cast<std::size_t>(hi - marks.begin())};
    }
};

namespace detail {

// Substream ids within a path's draw space.
inline constexpr std::uint32_t kStreamGauss = 0;
inline constexpr std::uint32_t kStreamJumps = 1;

struct SegmentIntegrator {
    const SwitchingProblem* p;
    RngStream* gauss;
    std::vector<double> b, s, xw;

    explicit SegmentIntegrator(const SwitchingProblem& prob, RngStream& g)
        : p(&prob), gauss(&g), b(prob.dim), s(prob.dim), xw(prob.dim) {}

    /// Advance x over [t0, t0+len) under regime i; accumulates the Brownian
    /// increment into dw_acc and the running-profit integral into profit_acc.
    void advance(double t0, double len, int i, std::vector<double>& x,
                 std::span<double> dw_acc, double* profit_acc) {
        if (profit_acc) *profit_acc += p->psi(t0, i, x) * len;
        if (len <= 0) return;
        p->eval_drift(t0, i, x, b);
        p->eval_vol(t0, i, x, s);
        const double sq = std::sqrt(len);
        for (int j = 0; j < p->dim; ++j) {
            const double g = gauss->gaussian();
            const double dwj = sq * g;
            x[static_cast<std::size_t>(j)] +=
                b[static_cast<std::size_t>(j)] * len + s[static_cast<std::size_t>(j)] * dwj;
            dw_acc[static_cast<std::size_t>(j)] += dwj;
        }
    }
};

inline void fill_features(PathBundle& path) {
    const int d = path.dim;
    path.feature.assign(path.state.size(), 0.0);
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    for (int k = 0; k <= path.grid.steps; ++k)
        for (int j = 0; j < d; ++j) {
            acc[static_cast<std::size_t>(j)] += path.state[static_cast<std::size_t>(k) * d + j];
            path.feature[static_cast<std::size_t>(k) * d + j] =
                acc[static_cast<std::size_t>(j)] / (k + 1);
        }
}

/// Simulates one randomized-regime path; deterministic in (seed, index).
inline PathBundle sample_one(const SwitchingProblem& p, const TimeGrid& grid, std::uint64_t seed,
                             std::uint64_t index) {
    CounterRng rng(seed, index);
    RngStream jumps(rng, kStreamJumps);
    RngStream gauss(rng, kStreamGauss);

    PathBundle path;
    path.grid = grid;
    path.dim = p.dim;
    path.dw.assign(static_cast<std::size_t>(grid.steps) * p.dim, 0.0);
    path.regime.assign(static_cast<std::size_t>(grid.steps) + 1, p.initial_mode);
    path.state.assign((static_cast<std::size_t>(grid.steps) + 1) * p.dim, 0.0);

    // Marked Poisson events: superposition of the per-regime intensities.
    const double total = p.modes.total_rate();
    double t = 0;
    for (;;) {
        t += -std::log(jumps.uniform()) / total;
        if (t > grid.horizon) break;
        double u = jumps.uniform() * total;
        int mark = 0;
        while (mark + 1 < p.modes.count && u > p.modes.intensity[static_cast<std::size_t>(mark)]) {
            u -= p.modes.intensity[static_cast<std::size_t>(mark)];
            ++mark;
        }
        path.marks.push_back({t, mark});
    }

    SegmentIntegrator integ(p, gauss);
    std::vector<double> x(p.x0);
    std::copy(x.begin(), x.end(), path.state.begin());
    int regime = p.initial_mode;
    std::size_t next_mark = 0;
    for (int k = 0; k < grid.steps; ++k) {
        const double t0 = grid.t(k), t1 = grid.t(k + 1);
        double s = t0;
        std::span<double> dwk{path.dw.data() + static_cast<std::size_t>(k) * p.dim,
                              static_cast<std::size_t>(p.dim)};
        while (next_mark < path.marks.size() && path.marks[next_mark].time <= t1) {
            const auto& mk = path.marks[next_mark];
            integ.advance(s, mk.time - s, regime, x, dwk, nullptr);
            regime = mk.mark;  // self-marks leave the regime unchanged
            s = mk.time;
            ++next_mark;
        }
        integ.advance(s, t1 - s, regime, x, dwk, nullptr);
        std::copy(x.begin(), x.end(),
                  path.state.begin() + (static_cast<std::size_t>(k) + 1) * p.dim);
        path.regime[static_cast<std::size_t>(k) + 1] = regime;
    }
    fill_features(path);
    return path;
}

/// Simulates one strategy-controlled path and its running-profit integral.
inline PathBundle controlled_one(const SwitchingProblem& p, const Strategy& strat,
                                 const TimeGrid& grid, std::uint64_t seed, std::uint64_t index,
                                 double* profit_integral) {
    CounterRng rng(seed, index);
    RngStream gauss(rng, kStreamGauss);

    PathBundle path;
    path.grid = grid;
    path.dim = p.dim;
    path.dw.assign(static_cast<std::size_t>(grid.steps) * p.dim, 0.0);
    path.regime.assign(static_cast<std::size_t>(grid.steps) + 1, strat.initial_mode);
    path.state.assign((static_cast<std::size_t>(grid.steps) + 1) * p.dim, 0.0);

    SegmentIntegrator integ(p, gauss);
    std::vector<double> x(p.x0);
    std::copy(x.begin(), x.end(), path.state.begin());
    int regime = strat.initial_mode;
    std::size_t next_sw = 0;
    if (profit_integral) *profit_integral = 0;
    // switches at exactly t = 0 take effect before integration starts
    while (next_sw < strat.switches.size() && strat.switches[next_sw].first <= 0.0) {
        regime = strat.switches[next_sw].second;
        ++next_sw;
    }
    path.regime[0] = regime;
    for (int k = 0; k < grid.steps; ++k) {
        const double t0 = grid.t(k), t1 = grid.t(k + 1);
        double s = t0;
        std::span<double> dwk{path.dw.data() + static_cast<std::size_t>(k) * p.dim,
                              static_cast<std::size_t>(p.dim)};
        while (next_sw < strat.switches.size() && strat.switches[next_sw].first <= t1) {
            const auto& [tau, to] = strat.switches[next_sw];
            integ.advance(s, tau - s, regime, x, dwk, profit_integral);
            regime = to;
            s = tau;
            ++next_sw;
        }
        integ.advance(s, t1 - s, regime, x, dwk, profit_integral);
        std::copy(x.begin(), x.end(),
                  path.state.begin() + (static_cast<std::size_t>(k) + 1) * p.dim);
        path.regime[static_cast<std::size_t>(k) + 1] = regime;
    }
    fill_features(path);
    return path;
}

}  // namespace detail

/// Randomized-regime forward simulation. Marks come from a Poisson process of
/// total rate sum_i lambda_i with regime-proportional labels; the state runs
/// an Euler scheme with exact sub-steps at every mark (the regime of each
/// sub-segment is its left-endpoint value).
inline std::vector<PathBundle> sample_paths(const SwitchingProblem& p, const TimeGrid& grid,
                                            int count, std::uint64_t seed) {
    if (count < 1) throw MalformedSpec("sample_paths: count must be >= 1");
    std::vector<PathBundle> out(static_cast<std::size_t>(count));
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) out[i] = detail::sample_one(p, grid, seed, i);
    });
    return out;
}

/// Deterministically controlled forward simulation under an impulse strategy.
inline std::vector<PathBundle> simulate_controlled(const SwitchingProblem& p, const Strategy& s,
                                                   const TimeGrid& grid, int count,
                                                   std::uint64_t seed) {
    s.validate(grid.horizon, p.modes.count);
    if (count < 1) throw MalformedSpec("simulate_controlled: count must be >= 1");
    std::vector<PathBundle> out(static_cast<std::size_t>(count));
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            out[i] = detail::controlled_one(p, s, grid, seed, i, nullptr);
    });
    return out;
}

/// Columnar debug dump of one path: header line, then t, regime, state.
inline void dump_path(const PathBundle& path, const std::string& filename) {
    const auto parent = std::filesystem::path(filename).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(filename);
    os << "t,I";
    for (int j = 0; j < path.dim; ++j) os << ",X_" << (j + 1);
    os << "\n";
    char buf[64];
    for (int k = 0; k <= path.grid.steps; ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", path.grid.t(k));
        os << buf << "," << (path.regime[static_cast<std::size_t>(k)] + 1);
        for (int j = 0; j < path.dim; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", path.state[static_cast<std::size_t>(k) * path.dim + j]);
            os << "," << buf;
        }
        os << "\n";
    }
}

}  // namespace cbsde
