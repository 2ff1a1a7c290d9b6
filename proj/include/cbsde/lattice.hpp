#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cbsde/model.hpp"
#include "cbsde/simulate.hpp"

namespace cbsde {

/// Values on the regime-augmented lattice: one number per (time index,
/// regime, node), with an optional vector width per slot.
struct LatticeField {
    int times = 0, modes = 0, nodes = 0, width = 1;
    std::vector<double> v;

    LatticeField() = default;
    LatticeField(int times_, int modes_, int nodes_, int width_ = 1)
        : times(times_), modes(modes_), nodes(nodes_), width(width_),
          v(static_cast<std::size_t>(times_) * modes_ * nodes_ * width_, 0.0) {}

    double& at(int k, int i, int node, int w = 0) {
        return v[((static_cast<std::size_t>(k) * modes + i) * nodes + node) * width + w];
    }
    double at(int k, int i, int node, int w = 0) const {
        return v[((static_cast<std::size_t>(k) * modes + i) * nodes + node) * width + w];
    }
    std::span<double> slice(int k, int i) {
        return {v.data() + (static_cast<std::size_t>(k) * modes + i) * nodes * width,
                static_cast<std::size_t>(nodes) * width};
    }
    std::span<const double> slice(int k, int i) const {
        return {v.data() + (static_cast<std::size_t>(k) * modes + i) * nodes * width,
                static_cast<std::size_t>(nodes) * width};
    }
};

using LatticeFunction = LatticeField;

/// Recombining trinomial lattice for the regime-augmented diffusion, d <= 2.
/// Per step the kernel factorizes into a regime draw (probability
/// lambda_j * dt of relabeling to j, state unchanged) and a per-dimension
/// trinomial move under the pre-jump regime whose first two moments match
/// (b, sigma) exactly on interior nodes. Transitions beyond the state box are
/// trimmed onto the boundary node.
class Lattice {
public:
    Lattice(const ModeSet& modes, int dim, const StateBox& box, TimeGrid grid,
            std::vector<double> x0, const CoefficientSpec& drift, const CoefficientSpec& vol,
            double dx_override = 0.0)
        : modes_(modes), dim_(dim), box_(box), grid_(grid), x0_(std::move(x0)), drift_(&drift),
          vol_(&vol) {
        if (dim_ > 2) throw NonMarkovian("lattice: state dimension above 2 unsupported");
        if (!drift.markovian() || !vol.markovian())
            throw NonMarkovian("lattice: path-feature coefficients unsupported");
        const double dt = grid_.dt();
        if (modes_.total_rate() * dt >= 1.0)
            throw MalformedSpec("lattice: requires dt * total intensity < 1; refine the grid");

        // dx per dim: sigma_bar * sqrt(3 dt) with a drift floor; degenerate
        // dimensions collapse to a single node.
        const double sigma_bar = vol.sup_abs_on(box_);
        const double b_bar = drift.sup_abs_on(box_);
        dx_.assign(static_cast<std::size_t>(dim_), 1.0);
        lo_.assign(static_cast<std::size_t>(dim_), 0);
        hi_.assign(static_cast<std::size_t>(dim_), 0);
        for (int j = 0; j < dim_; ++j) {
            double dx = dx_override > 0 ? dx_override
                                        : std::max(sigma_bar * std::sqrt(3.0 * dt), b_bar * dt);
            if (dx <= 0) {
                dx_[static_cast<std::size_t>(j)] = 1.0;
                continue;  // single node in this dimension
            }
            dx_[static_cast<std::size_t>(j)] = dx;
            const double lo_span = (x0_[static_cast<std::size_t>(j)] - box_.lo[static_cast<std::size_t>(j)]) / dx;
            const double hi_span = (box_.hi[static_cast<std::size_t>(j)] - x0_[static_cast<std::size_t>(j)]) / dx;
            lo_[static_cast<std::size_t>(j)] = -std::min<int>(grid_.steps, static_cast<int>(std::floor(lo_span + 1e-12)));
            hi_[static_cast<std::size_t>(j)] = std::min<int>(grid_.steps, static_cast<int>(std::floor(hi_span + 1e-12)));
        }
        counts_.assign(static_cast<std::size_t>(dim_), 1);
        nodes_ = 1;
        for (int j = 0; j < dim_; ++j) {
            counts_[static_cast<std::size_t>(j)] = hi_[static_cast<std::size_t>(j)] - lo_[static_cast<std::size_t>(j)] + 1;
            nodes_ *= counts_[static_cast<std::size_t>(j)];
        }
        if (nodes_ > 2'000'000)
            throw MalformedSpec("lattice: node budget exceeded; coarsen dx or shrink the box");
    }

    const TimeGrid& grid() const { return grid_; }
    const ModeSet& modes() const { return modes_; }
    int dim() const { return dim_; }
    int node_count() const { return nodes_; }
    int origin_node() const { return index_of(std::vector<int>(static_cast<std::size_t>(dim_), 0)); }

    void node_state(int node, std::span<double> x) const {
        for (int j = 0; j < dim_; ++j) {
            const int c = counts_[static_cast<std::size_t>(j)];
            const int idx = lo_[static_cast<std::size_t>(j)] + node % c;
            node /= c;
            x[static_cast<std::size_t>(j)] = x0_[static_cast<std::size_t>(j)] + idx * dx_[static_cast<std::size_t>(j)];
        }
    }
    std::vector<double> node_state(int node) const {
        std::vector<double> x(static_cast<std::size_t>(dim_));
        node_state(node, x);
        return x;
    }

    /// nearest node to an arbitrary state (clamped into the box)
    int nearest_node(std::span<const double> x) const {
        std::vector<int> idx(static_cast<std::size_t>(dim_));
        for (int j = 0; j < dim_; ++j) {
            const double rel = (x[static_cast<std::size_t>(j)] - x0_[static_cast<std::size_t>(j)]) / dx_[static_cast<std::size_t>(j)];
            idx[static_cast<std::size_t>(j)] = std::clamp(static_cast<int>(std::lround(rel)),
                                                          lo_[static_cast<std::size_t>(j)], hi_[static_cast<std::size_t>(j)]);
        }
        return index_of(idx);
    }

    /// Multilinear interpolation of a node slice at an arbitrary state.
    double interpolate(std::span<const double> slice, std::span<const double> x) const {
        std::array<int, 2> base{};
        std::array<double, 2> frac{};
        for (int j = 0; j < dim_; ++j) {
            const double rel = (x[static_cast<std::size_t>(j)] - x0_[static_cast<std::size_t>(j)]) / dx_[static_cast<std::size_t>(j)];
            double fl = std::floor(rel);
            int b = static_cast<int>(fl);
            double f = rel - fl;
            if (b < lo_[static_cast<std::size_t>(j)]) { b = lo_[static_cast<std::size_t>(j)]; f = 0; }
            if (b >= hi_[static_cast<std::size_t>(j)]) { b = hi_[static_cast<std::size_t>(j)]; f = 0; }
            base[static_cast<std::size_t>(j)] = b;
            frac[static_cast<std::size_t>(j)] = f;
        }
        double out = 0;
        const int corners = 1 << dim_;
        for (int mask = 0; mask < corners; ++mask) {
            double w = 1;
            std::vector<int> idx(static_cast<std::size_t>(dim_));
            for (int j = 0; j < dim_; ++j) {
                const bool up = (mask >> j) & 1;
                w *= up ? frac[static_cast<std::size_t>(j)] : 1.0 - frac[static_cast<std::size_t>(j)];
                idx[static_cast<std::size_t>(j)] = std::min(base[static_cast<std::size_t>(j)] + (up ? 1 : 0),
                                                            hi_[static_cast<std::size_t>(j)]);
            }
            if (w != 0) out += w * slice[static_cast<std::size_t>(index_of(idx))];
        }
        return out;
    }

    /// Per-dimension trinomial weights at (t, regime, node): target node
    /// offsets and probabilities; moments of the move match (b, sigma) with
    /// second-moment drift correction, then trimmed at the box edge.
    struct Stencil {
        int count = 0;
        std::array<int, 9> node{};
        std::array<double, 9> w{};
    };

    Stencil stencil(double t, int i, int node) const {
        std::vector<double> x(static_cast<std::size_t>(dim_)), b(static_cast<std::size_t>(dim_)),
            s(static_cast<std::size_t>(dim_));
        node_state(node, x);
        auto xc = box_.clamped(x);
        drift_->eval(t, i, xc, b);
        vol_->eval(t, i, xc, s);
        const double dt = grid_.dt();

        std::array<std::array<double, 3>, 2> pdim{};  // [dim][down, mid, up]
        std::vector<int> idx(static_cast<std::size_t>(dim_));
        int tmp = node;
        for (int j = 0; j < dim_; ++j) {
            const int c = counts_[static_cast<std::size_t>(j)];
            idx[static_cast<std::size_t>(j)] = lo_[static_cast<std::size_t>(j)] + tmp % c;
            tmp /= c;
            const double dx = dx_[static_cast<std::size_t>(j)];
            const double m1 = b[static_cast<std::size_t>(j)] * dt;
            const double m2 = s[static_cast<std::size_t>(j)] * s[static_cast<std::size_t>(j)] * dt + m1 * m1;
            double pu = 0.5 * (m2 / (dx * dx) + m1 / dx);
            double pd = 0.5 * (m2 / (dx * dx) - m1 / dx);
            // Drift-dominated corner (variance target below |mean| * dx):
            // drop the opposing move and keep the mean exact; the residual
            // variance excess is O(dt^2).
            if (pd < 0) {
                pd = 0;
                pu = std::min(1.0, m1 / dx);
            } else if (pu < 0) {
                pu = 0;
                pd = std::min(1.0, -m1 / dx);
            }
            double pm = 1.0 - pu - pd;
            if (pm < 0) {  // renormalize when the spacing floor binds
                const double sum = pu + pd;
                pu /= sum;
                pd /= sum;
                pm = 0;
            }
            pdim[static_cast<std::size_t>(j)] = {pd, pm, pu};
        }
        Stencil st;
        const int moves = dim_ == 1 ? 3 : 9;
        for (int mv = 0; mv < moves; ++mv) {
            double w = 1;
            std::vector<int> tgt(idx);
            int rem = mv;
            for (int j = 0; j < dim_; ++j) {
                const int dj = rem % 3 - 1;  // -1, 0, +1
                rem /= 3;
                w *= pdim[static_cast<std::size_t>(j)][static_cast<std::size_t>(dj + 1)];
                tgt[static_cast<std::size_t>(j)] = std::clamp(idx[static_cast<std::size_t>(j)] + dj,
                                                              lo_[static_cast<std::size_t>(j)],
                                                              hi_[static_cast<std::size_t>(j)]);
            }
            if (w == 0) continue;
            st.node[static_cast<std::size_t>(st.count)] = index_of(tgt);
            st.w[static_cast<std::size_t>(st.count)] = w;
            ++st.count;
        }
        return st;
    }

    /// One-step conditional expectation of a node slice under the frozen
    /// regime-i diffusion, from time index k to values at k+1.
    double expect_frozen(const Stencil& st, std::span<const double> next) const {
        double v = 0;
        for (int q = 0; q < st.count; ++q)
            v += st.w[static_cast<std::size_t>(q)] * next[static_cast<std::size_t>(st.node[static_cast<std::size_t>(q)])];
        return v;
    }

    double jump_prob(int j) const {
        return modes_.intensity[static_cast<std::size_t>(j)] * grid_.dt();
    }

    /// Central/one-sided gradient surrogate of a slice times sigma: the
    /// lattice stand-in for the Brownian integrand.
    void gradient_z(double t, int i, int node, std::span<const double> slice,
                    std::span<double> z_out) const {
        std::vector<int> idx(static_cast<std::size_t>(dim_));
        int tmp = node;
        for (int j = 0; j < dim_; ++j) {
            const int c = counts_[static_cast<std::size_t>(j)];
            idx[static_cast<std::size_t>(j)] = lo_[static_cast<std::size_t>(j)] + tmp % c;
            tmp /= c;
        }
        std::vector<double> x(static_cast<std::size_t>(dim_)), s(static_cast<std::size_t>(dim_));
        node_state(node, x);
        vol_->eval(t, i, box_.clamped(x), s);
        for (int j = 0; j < dim_; ++j) {
            const int up = std::min(idx[static_cast<std::size_t>(j)] + 1, hi_[static_cast<std::size_t>(j)]);
            const int dn = std::max(idx[static_cast<std::size_t>(j)] - 1, lo_[static_cast<std::size_t>(j)]);
            if (up == dn) {
                z_out[static_cast<std::size_t>(j)] = 0;
                continue;
            }
            auto shifted = idx;
            shifted[static_cast<std::size_t>(j)] = up;
            const double vu = slice[static_cast<std::size_t>(index_of(shifted))];
            shifted[static_cast<std::size_t>(j)] = dn;
            const double vd = slice[static_cast<std::size_t>(index_of(shifted))];
            z_out[static_cast<std::size_t>(j)] = s[static_cast<std::size_t>(j)] * (vu - vd) /
                                                 ((up - dn) * dx_[static_cast<std::size_t>(j)]);
        }
    }

    /// Forward occupation weights of (regime, node) pushed from (i0, x0).
    LatticeField forward_measure(int initial_mode) const {
        LatticeField rho(grid_.steps + 1, modes_.count, nodes_);
        rho.at(0, initial_mode, origin_node()) = 1.0;
        const int m = modes_.count;
        for (int k = 0; k < grid_.steps; ++k) {
            const double t = grid_.t(k);
            for (int i = 0; i < m; ++i) {
                double stay = 1.0;
                for (int j = 0; j < m; ++j)
                    if (j != i) stay -= jump_prob(j);
                for (int node = 0; node < nodes_; ++node) {
                    const double mass = rho.at(k, i, node);
                    if (mass == 0) continue;
                    const auto st = stencil(t, i, node);
                    for (int q = 0; q < st.count; ++q) {
                        const double w = mass * st.w[static_cast<std::size_t>(q)];
                        const int tgt = st.node[static_cast<std::size_t>(q)];
                        rho.at(k + 1, i, tgt) += w * stay;
                        for (int j = 0; j < m; ++j)
                            if (j != i) rho.at(k + 1, j, tgt) += w * jump_prob(j);
                    }
                }
            }
        }
        return rho;
    }

private:
    int index_of(const std::vector<int>& idx) const {
        int node = 0, mult = 1;
        for (int j = 0; j < dim_; ++j) {
            node += (idx[static_cast<std::size_t>(j)] - lo_[static_cast<std::size_t>(j)]) * mult;
            mult *= counts_[static_cast<std::size_t>(j)];
        }
        return node;
    }

    ModeSet modes_;
    int dim_;
    StateBox box_;
    TimeGrid grid_;
    std::vector<double> x0_;
    const CoefficientSpec* drift_;
    const CoefficientSpec* vol_;
    std::vector<double> dx_;
    std::vector<int> lo_, hi_, counts_;
    int nodes_ = 1;
};

inline Lattice make_lattice(const SwitchingProblem& p, const TimeGrid& grid,
                            double dx_override = 0.0) {
    return Lattice(p.modes, p.dim, p.box, grid, p.x0, p.drift, p.vol, dx_override);
}
inline Lattice make_lattice(const ObliqueSystemSpec& s, const TimeGrid& grid,
                            double dx_override = 0.0) {
    return Lattice(s.modes, s.dim, s.box, grid, s.x0, s.drift, s.vol, dx_override);
}

/// Exact one-step conditional expectation under the regime-augmented kernel:
/// regime relabels to j with probability lambda_j * dt while the state moves
/// under the pre-jump regime's trinomial.
inline LatticeField conditional_expectation(const Lattice& L, const LatticeField& V, int k) {
    const int m = L.modes().count, nodes = L.node_count();
    LatticeField out(1, m, nodes);
    const double t = L.grid().t(k);
    for (int i = 0; i < m; ++i) {
        double stay = 1.0;
        for (int j = 0; j < m; ++j)
            if (j != i) stay -= L.jump_prob(j);
        for (int node = 0; node < nodes; ++node) {
            const auto st = L.stencil(t, i, node);
            double v = stay * L.expect_frozen(st, V.slice(k + 1, i));
            for (int j = 0; j < m; ++j)
                if (j != i) v += L.jump_prob(j) * L.expect_frozen(st, V.slice(k + 1, j));
            out.at(0, i, node) = v;
        }
    }
    return out;
}

/// Backward optimal-stopping recursion per regime under the frozen kernel:
/// V_N = terminal, V_k = max(barrier_k, E[V_{k+1}] + running * dt). The
/// barrier applies strictly before the horizon.
inline LatticeField snell_envelope(
    const Lattice& L, const std::function<double(int k, int i, int node)>& barrier,
    const std::function<double(int i, int node)>& terminal,
    const std::function<double(int k, int i, int node)>& running) {
    const int N = L.grid().steps, m = L.modes().count, nodes = L.node_count();
    const double dt = L.grid().dt();
    LatticeField V(N + 1, m, nodes);
    for (int i = 0; i < m; ++i)
        for (int node = 0; node < nodes; ++node) V.at(N, i, node) = terminal(i, node);
    for (int k = N - 1; k >= 0; --k) {
        const double t = L.grid().t(k);
        for (int i = 0; i < m; ++i) {
            auto next = V.slice(k + 1, i);
            for (int node = 0; node < nodes; ++node) {
                const auto st = L.stencil(t, i, node);
                const double cont = L.expect_frozen(st, next) + running(k, i, node) * dt;
                V.at(k, i, node) = std::max(barrier(k, i, node), cont);
            }
        }
    }
    return V;
}

/// Coupled dynamic program for the switching value: continuation under the
/// frozen kernel plus running profit, against immediate switching. The inner
/// obstacle is iterated to its fixed point (at most m sweeps by the strict
/// triangle condition), ties broken toward the smallest regime index.
inline LatticeField switching_value_dp(const Lattice& L, const SwitchingProblem& p) {
    if (!p.markovian()) throw NonMarkovian("switching_value_dp: path-feature coefficients");
    if (p.modes.count > 6) throw MalformedSpec("switching_value_dp: more than 6 regimes");
    const int N = L.grid().steps, m = p.modes.count, nodes = L.node_count();
    const double dt = L.grid().dt();
    LatticeField V(N + 1, m, nodes);
    std::vector<double> x(static_cast<std::size_t>(p.dim));
    for (int i = 0; i < m; ++i)
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            V.at(N, i, node) = p.g(i, x);
        }
    std::vector<double> cont(static_cast<std::size_t>(m));
    for (int k = N - 1; k >= 0; --k) {
        const double t = L.grid().t(k);
        for (int node = 0; node < nodes; ++node) {
            L.node_state(node, x);
            for (int i = 0; i < m; ++i) {
                const auto st = L.stencil(t, i, node);
                cont[static_cast<std::size_t>(i)] =
                    L.expect_frozen(st, V.slice(k + 1, i)) + p.psi(t, i, x) * dt;
                V.at(k, i, node) = cont[static_cast<std::size_t>(i)];
            }
            for (int sweep = 0; sweep <= m; ++sweep) {
                bool changed = false;
                for (int i = 0; i < m; ++i) {
                    double best = cont[static_cast<std::size_t>(i)];
                    for (int j = 0; j < m; ++j) {
                        if (j == i) continue;
                        const double sw = V.at(k, j, node) + p.c(t, i, j);
                        if (sw > best + 1e-15) best = sw;
                    }
                    if (best > V.at(k, i, node)) {
                        V.at(k, i, node) = best;
                        changed = true;
                    }
                }
                if (!changed) break;
            }
        }
    }
    return V;
}

/// Uniform value bound |V_k| <= (T - t_k + 1) max(psi_bar, g_bar).
inline bool bound_check(const LatticeField& V, const SwitchingProblem& p, const TimeGrid& grid) {
    const double cap = std::max(p.bounds.psi_bar, p.bounds.g_bar);
    for (int k = 0; k < V.times; ++k) {
        const double limit = (grid.horizon - grid.t(k) + 1.0) * cap;
        for (int i = 0; i < V.modes; ++i)
            for (int node = 0; node < V.nodes; ++node)
                if (!(std::fabs(V.at(k, i, node)) <= limit + 1e-12)) return false;
    }
    return true;
}

}  // namespace cbsde
