#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>

#include "cbsde/model.hpp"

namespace cbsde {
namespace step {

inline constexpr int kMaxModes = 16;
inline constexpr int kMaxPicard = 50;
inline constexpr int kMaxSweeps = 100;
inline constexpr double kSweepTol = 1e-12;

/// Exact root of  y = a + sum_l beta_l * (d_l - y)^+  with beta_l >= 0.
/// The right side is non-increasing in y, so the root is unique; it is found
/// by descending the sorted kinks.
inline double kink_solve(double a, std::span<const double> beta, std::span<const double> d) {
    const int n = static_cast<int>(beta.size());
    std::array<int, kMaxModes> idx{};
    int active = 0;
    for (int l = 0; l < n; ++l)
        if (beta[static_cast<std::size_t>(l)] > 0) idx[static_cast<std::size_t>(active++)] = l;
    std::sort(idx.begin(), idx.begin() + active, [&](int lhs, int rhs) {
        return d[static_cast<std::size_t>(lhs)] > d[static_cast<std::size_t>(rhs)];
    });
    double num = a, den = 1.0, y = a;
    for (int q = 0; q < active; ++q) {
        const int l = idx[static_cast<std::size_t>(q)];
        if (d[static_cast<std::size_t>(l)] <= y) break;
        num += beta[static_cast<std::size_t>(l)] * d[static_cast<std::size_t>(l)];
        den += beta[static_cast<std::size_t>(l)];
        y = num / den;
    }
    return y;
}

/// One implicit backward step of the coupled regime system
///   y_i = cont_i + f_i(y_i, y) * dt + sum_j beta_ij * (kink_ij(y_j) - y_i)^+ .
///
/// The penalty's jump argument is treated implicitly through the
/// cross-regime identification u_j = y_j - y_i (Gauss-Seidel sweeps in
/// ascending regime order); the driver's own y enters a per-regime Picard
/// iteration guarded by k * dt < 1.
///
/// `f_dt(i, y_hat, y_all)` returns f * dt; `kink(i, j, y_j)` the penalty kink
/// (only called for j in targets(i), j != i); `beta(i, j)` = n lambda_j dt
/// times the constraint slope. Results: y (in/out, seeded with cont) and the
/// per-regime penalty increment dk.
template <class FDt, class Kink, class Beta, class Targets>
inline void solve_mode_system(int m, FDt&& f_dt, Kink&& kink, Beta&& beta, Targets&& targets,
                              std::span<const double> cont, std::span<double> y,
                              std::span<double> dk, bool has_penalty) {
    std::array<double, kMaxModes> brow{}, drow{};
    for (int i = 0; i < m; ++i) y[static_cast<std::size_t>(i)] = cont[static_cast<std::size_t>(i)];

    auto scalar_solve = [&](int i) {
        int nk = 0;
        if (has_penalty) {
            for (int j : targets(i)) {
                if (j == i) continue;
                const double b = beta(i, j);
                if (b <= 0) continue;
                brow[static_cast<std::size_t>(nk)] = b;
                drow[static_cast<std::size_t>(nk)] = kink(i, j, y[static_cast<std::size_t>(j)]);
                ++nk;
            }
        }
        const std::span<const double> bs(brow.data(), static_cast<std::size_t>(nk));
        const std::span<const double> ds(drow.data(), static_cast<std::size_t>(nk));
        double yh = y[static_cast<std::size_t>(i)];
        for (int it = 0; it < kMaxPicard; ++it) {
            const double a = cont[static_cast<std::size_t>(i)] + f_dt(i, yh, y);
            const double yn = nk ? kink_solve(a, bs, ds) : a;
            if (std::fabs(yn - yh) <= 1e-14 * (1.0 + std::fabs(yn))) return yn;
            yh = yn;
        }
        throw NoConvergence(
            "backward step: implicit fixed point failed in 50 iterations (k*dt >= 1 guard)");
    };

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double change = 0, scale = 1;
        for (int i = 0; i < m; ++i) {
            const double yn = scalar_solve(i);
            change = std::max(change, std::fabs(yn - y[static_cast<std::size_t>(i)]));
            scale = std::max(scale, std::fabs(yn));
            y[static_cast<std::size_t>(i)] = yn;
        }
        if (change <= kSweepTol * scale) break;
        if (sweep + 1 == kMaxSweeps)
            throw NoConvergence("backward step: cross-regime sweeps did not converge");
    }

    for (int i = 0; i < m; ++i) {
        double acc = 0;
        if (has_penalty)
            for (int j : targets(i)) {
                if (j == i) continue;
                const double b = beta(i, j);
                if (b <= 0) continue;
                acc += b * std::max(0.0, kink(i, j, y[static_cast<std::size_t>(j)]) -
                                             y[static_cast<std::size_t>(i)]);
            }
        dk[static_cast<std::size_t>(i)] = acc;
    }
}

struct AllTargets {
    int m;
    struct Range {
        int m;
        struct It {
            int v;
            int operator*() const { return v; }
            It& operator++() {
                ++v;
                return *this;
            }
            bool operator!=(const It& o) const { return v != o.v; }
        };
        It begin() const { return {0}; }
        It end() const { return {m}; }
    };
    Range operator()(int) const { return {m}; }
};

}  // namespace step
}  // namespace cbsde
