#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cbsde/bsde.hpp"
#include "cbsde/model.hpp"
#include "cbsde/rng.hpp"

namespace cbsde {

// ============================================================================
// Polyhedral cones with exact projections
// ============================================================================

/// Closed convex cones with closed-form (or exactly enumerable) projections:
/// the product (R+)^p x R^q, one halfspace through the origin, or an
/// intersection of up to eight such halfspaces.
struct ConvexCone {
    enum class Kind { OrthantProduct, HalfSpace, HalfSpaceIntersection };
    Kind kind = Kind::OrthantProduct;
    int dim = 1;
    int nonneg_coords = 1;                     // OrthantProduct: first p coordinates >= 0
    std::vector<std::vector<double>> normals;  // halfspaces {x : <a, x> >= 0}

    static ConvexCone orthant_product(int dim, int nonneg) {
        return {Kind::OrthantProduct, dim, nonneg, {}};
    }
    static ConvexCone halfspace(std::vector<double> normal) {
        ConvexCone c{Kind::HalfSpace, static_cast<int>(normal.size()), 0, {}};
        c.normals.push_back(std::move(normal));
        return c;
    }
    static ConvexCone intersection(std::vector<std::vector<double>> normals) {
        if (normals.empty() || normals.size() > 8)
            throw MalformedSpec("cone: intersection supports 1..8 halfspaces");
        ConvexCone c{Kind::HalfSpaceIntersection, static_cast<int>(normals.front().size()), 0, {}};
        c.normals = std::move(normals);
        return c;
    }
};

inline std::vector<double> project_cone(const ConvexCone& c, std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    switch (c.kind) {
        case ConvexCone::Kind::OrthantProduct:
            for (int j = 0; j < c.nonneg_coords; ++j)
                out[static_cast<std::size_t>(j)] = std::max(0.0, out[static_cast<std::size_t>(j)]);
            return out;
        case ConvexCone::Kind::HalfSpace: {
            const auto& a = c.normals.front();
            double dot = 0, nn = 0;
            for (std::size_t j = 0; j < a.size(); ++j) {
                dot += a[j] * x[j];
                nn += a[j] * a[j];
            }
            if (dot >= 0 || nn == 0) return out;
            const double s = dot / nn;
            for (std::size_t j = 0; j < a.size(); ++j) out[j] -= s * a[j];
            return out;
        }
        case ConvexCone::Kind::HalfSpaceIntersection: {
            // Exact projection by active-set enumeration: for each subset S,
            // solve x* = x + A_S^T mu with A_S x* = 0, and keep the first
            // candidate with mu >= 0 and all constraints satisfied.
            const int n = static_cast<int>(c.normals.size());
            const int d = c.dim;
            auto feasible = [&](const std::vector<double>& p) {
                for (const auto& a : c.normals) {
                    double dot = 0;
                    for (int j = 0; j < d; ++j) dot += a[static_cast<std::size_t>(j)] * p[static_cast<std::size_t>(j)];
                    if (dot < -1e-10) return false;
                }
                return true;
            };
            std::vector<double> best;
            double best_dist = std::numeric_limits<double>::infinity();
            for (unsigned mask = 0; mask < (1u << n); ++mask) {
                std::vector<int> S;
                for (int q = 0; q < n; ++q)
                    if ((mask >> q) & 1u) S.push_back(q);
                std::vector<double> cand(x.begin(), x.end());
                if (!S.empty()) {
                    const auto ns = static_cast<Eigen::Index>(S.size());
                    Eigen::MatrixXd A(ns, d);
                    for (Eigen::Index r = 0; r < ns; ++r)
                        for (int j = 0; j < d; ++j)
                            A(r, j) = c.normals[static_cast<std::size_t>(S[static_cast<std::size_t>(r)])]
                                               [static_cast<std::size_t>(j)];
                    Eigen::VectorXd xv(d);
                    for (int j = 0; j < d; ++j) xv(j) = x[static_cast<std::size_t>(j)];
                    const Eigen::MatrixXd G = A * A.transpose();
                    const Eigen::VectorXd rhs = -A * xv;
                    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
                    if (ldlt.info() != Eigen::Success) continue;
                    const Eigen::VectorXd mu = ldlt.solve(rhs);
                    if ((G * mu - rhs).norm() > 1e-9 * (1 + rhs.norm())) continue;  // singular set
                    bool dual_ok = true;
                    for (Eigen::Index r = 0; r < ns; ++r) dual_ok = dual_ok && mu(r) >= -1e-12;
                    if (!dual_ok) continue;
                    const Eigen::VectorXd p = xv + A.transpose() * mu;
                    for (int j = 0; j < d; ++j) cand[static_cast<std::size_t>(j)] = p(j);
                }
                if (!feasible(cand)) continue;
                double dist = 0;
                for (int j = 0; j < d; ++j) {
                    const double dd = cand[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(j)];
                    dist += dd * dd;
                }
                if (dist < best_dist) {
                    best_dist = dist;
                    best = cand;
                }
            }
            return best;
        }
    }
    return out;
}

inline double cone_distance(const ConvexCone& c, std::span<const double> x) {
    const auto p = project_cone(c, x);
    double d = 0;
    for (std::size_t j = 0; j < p.size(); ++j) d += (x[j] - p[j]) * (x[j] - p[j]);
    return std::sqrt(d);
}

// ============================================================================
// Viability and multidimensional comparison
// ============================================================================

struct Verdict {
    bool ok = false;
    bool precondition_ok = true;
    double worst = 0;
    std::string witness;
};

/// Flat view of an m-vector process over (time, slot): data[t][slot*m + c].
struct VectorProcessView {
    int times = 0, slots = 0, m = 0;
    std::function<double(int t, int slot, int comp)> at;
};

inline VectorProcessView view_of_lattice(const LatticeField& f) {
    return {f.times, f.nodes, f.modes,
            [&f](int t, int slot, int comp) { return f.at(t, comp, slot); }};
}

/// Checks that the vector process stays in the cone: requires the terminal
/// slice inside (the proposition's hypothesis), then verifies
/// max d_C(Y_t) <= tol over all (t, slot).
inline Verdict check_viability(const VectorProcessView& Y, const ConvexCone& cone, double tol) {
    Verdict v;
    std::vector<double> point(static_cast<std::size_t>(Y.m));
    for (int slot = 0; slot < Y.slots; ++slot) {
        for (int c = 0; c < Y.m; ++c) point[static_cast<std::size_t>(c)] = Y.at(Y.times - 1, slot, c);
        if (cone_distance(cone, point) > tol) {
            v.precondition_ok = false;
            v.witness = "terminal value outside the cone at slot " + std::to_string(slot);
            return v;
        }
    }
    v.ok = true;
    for (int t = 0; t < Y.times; ++t)
        for (int slot = 0; slot < Y.slots; ++slot) {
            for (int c = 0; c < Y.m; ++c) point[static_cast<std::size_t>(c)] = Y.at(t, slot, c);
            const double d = cone_distance(cone, point);
            if (d > v.worst) {
                v.worst = d;
                if (d > tol) {
                    v.ok = false;
                    v.witness = "distance " + std::to_string(d) + " at t-index " +
                                std::to_string(t) + " slot " + std::to_string(slot);
                }
            }
        }
    return v;
}

/// Sampled certificate of the structural inequality coupling two vector
/// drivers: finds the smallest constant C0 such that
///   -4 <y^-, F1(t, y^+ + y', z) - F2(t, y', z')> <= 2 sum 1_{y_i<0} |z_i - z'_i|^2
///                                                   + 2 C0 |y^-|^2
/// over the sample; fails if no finite constant fits.
struct StructuralCheck {
    bool ok = true;
    double c0 = 0;
};

inline StructuralCheck structural_inequality_constant(
    const std::function<void(double t, std::span<const double> y, std::span<const double> z,
                             std::span<double> out)>& F1,
    const std::function<void(double t, std::span<const double> y, std::span<const double> z,
                             std::span<double> out)>& F2,
    int m, double horizon, std::uint64_t seed, int samples = 10000) {
    StructuralCheck res;
    HaltonBox hb(seed, 2 * m + 2);
    std::vector<double> y(static_cast<std::size_t>(m)), yp(static_cast<std::size_t>(m)),
        ysum(static_cast<std::size_t>(m)), z(static_cast<std::size_t>(m)),
        zp(static_cast<std::size_t>(m)), f1(static_cast<std::size_t>(m)),
        f2(static_cast<std::size_t>(m));
    for (int s = 0; s < samples; ++s) {
        const double t = horizon * hb.coord(static_cast<std::uint64_t>(s), 2 * m + 1);
        double ynorm2 = 0;
        for (int c = 0; c < m; ++c) {
            y[static_cast<std::size_t>(c)] = 4.0 * hb.coord(static_cast<std::uint64_t>(s), c) - 2.0;
            yp[static_cast<std::size_t>(c)] =
                4.0 * hb.coord(static_cast<std::uint64_t>(s), m + c) - 2.0;
            z[static_cast<std::size_t>(c)] = 2.0 * hb.coord(static_cast<std::uint64_t>(s) + 1, c) - 1.0;
            zp[static_cast<std::size_t>(c)] =
                2.0 * hb.coord(static_cast<std::uint64_t>(s) + 1, m + c) - 1.0;
            const double neg = std::max(0.0, -y[static_cast<std::size_t>(c)]);
            ynorm2 += neg * neg;
            ysum[static_cast<std::size_t>(c)] = std::max(0.0, y[static_cast<std::size_t>(c)]) +
                                                yp[static_cast<std::size_t>(c)];
        }
        F1(t, ysum, z, f1);
        F2(t, yp, zp, f2);
        double lhs = 0, zterm = 0;
        for (int c = 0; c < m; ++c) {
            const double neg = std::max(0.0, -y[static_cast<std::size_t>(c)]);
            lhs += -4.0 * neg * (f1[static_cast<std::size_t>(c)] - f2[static_cast<std::size_t>(c)]);
            if (y[static_cast<std::size_t>(c)] < 0) {
                const double dz = z[static_cast<std::size_t>(c)] - zp[static_cast<std::size_t>(c)];
                zterm += 2.0 * dz * dz;
            }
        }
        if (ynorm2 < 1e-14) {
            if (lhs > zterm + 1e-9) res.ok = false;
            continue;
        }
        res.c0 = std::max(res.c0, (lhs - zterm) / (2.0 * ynorm2));
    }
    if (!(res.c0 < 1e8)) res.ok = false;
    return res;
}

/// Componentwise comparison of two vector processes via the viability of the
/// stacked pair (Y1 - Y2, Y2) in (R+)^m x R^m. Precondition: terminal
/// ordering Y1_T >= Y2_T.
inline Verdict check_multidim_comparison(const VectorProcessView& Y1, const VectorProcessView& Y2,
                                         double tol) {
    Verdict v;
    if (Y1.times != Y2.times || Y1.slots != Y2.slots || Y1.m != Y2.m) {
        v.precondition_ok = false;
        v.witness = "shape mismatch";
        return v;
    }
    for (int slot = 0; slot < Y1.slots; ++slot)
        for (int c = 0; c < Y1.m; ++c)
            if (Y1.at(Y1.times - 1, slot, c) < Y2.at(Y1.times - 1, slot, c) - 1e-12) {
                v.precondition_ok = false;
                v.witness = "terminal ordering Y1_T >= Y2_T fails at slot " + std::to_string(slot);
                return v;
            }
    const auto cone = ConvexCone::orthant_product(2 * Y1.m, Y1.m);
    VectorProcessView stacked{
        Y1.times, Y1.slots, 2 * Y1.m, [&](int t, int slot, int comp) {
            return comp < Y1.m ? Y1.at(t, slot, comp) - Y2.at(t, slot, comp)
                               : Y2.at(t, slot, comp - Y1.m);
        }};
    return check_viability(stacked, cone, tol);
}

// ============================================================================
// Monotone-limit battery
// ============================================================================

/// Numerical battery over a penalization ladder: (a) values increase level
/// to level, (b) the quadruple norms stay bounded, (c) (Z, U) successive
/// differences vanish along the tail in the empirical L1 norm.
struct BatteryReport {
    bool increasing = true;
    bool bounded = true;
    bool cauchy = true;
    double sup_y = 0, sup_z = 0, sup_u = 0, sup_k = 0;
    std::vector<double> zu_diffs;
    std::string detail;
    bool pass() const { return increasing && bounded && cauchy; }
};

inline BatteryReport monotone_limit_battery(const LadderResult& ladder) {
    BatteryReport rep;
    const auto& levels = ladder.levels;
    if (levels.size() < 1 || levels.front().engine != EngineKind::Lattice) {
        rep.detail = "battery needs stored lattice levels";
        rep.increasing = rep.bounded = rep.cauchy = false;
        return rep;
    }
    const int m = levels.front().y.modes;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const auto& sol = levels[l];
        for (double v : sol.y.v) {
            rep.sup_y = std::max(rep.sup_y, std::fabs(v));
            if (!std::isfinite(v)) rep.bounded = false;
        }
        for (double v : sol.z.v) rep.sup_z = std::max(rep.sup_z, std::fabs(v));
        for (int i = 0; i < sol.k_incr.modes; ++i)
            for (int node = 0; node < sol.k_incr.nodes; ++node) {
                double acc = 0;
                for (int k = 0; k < sol.k_incr.times; ++k) acc += sol.k_incr.at(k, i, node);
                rep.sup_k = std::max(rep.sup_k, std::fabs(acc));
            }
        for (int k = 0; k < sol.y.times; ++k)
            for (int i = 0; i < m; ++i)
                for (int node = 0; node < sol.y.nodes; ++node)
                    for (int j = 0; j < m; ++j)
                        rep.sup_u = std::max(rep.sup_u, std::fabs(sol.u_lattice(k, i, node, j)));
        if (l > 0) {
            const auto& prev = levels[l - 1];
            double worst = 0;
            for (std::size_t q = 0; q < sol.y.v.size(); ++q)
                worst = std::min(worst, sol.y.v[q] - prev.y.v[q]);
            if (worst < -1e-8) {
                rep.increasing = false;
                rep.detail = "level " + std::to_string(l) + " drops below level " +
                             std::to_string(l - 1) + " by " + std::to_string(-worst);
            }
            double zdiff = 0, udiff = 0;
            for (std::size_t q = 0; q < sol.z.v.size(); ++q)
                zdiff += std::fabs(sol.z.v[q] - prev.z.v[q]);
            zdiff /= std::max<std::size_t>(1, sol.z.v.size());
            for (int k = 0; k < sol.y.times; ++k)
                for (int i = 0; i < m; ++i)
                    for (int node = 0; node < sol.y.nodes; ++node)
                        for (int j = 0; j < m; ++j)
                            udiff += std::fabs(sol.u_lattice(k, i, node, j) -
                                               prev.u_lattice(k, i, node, j));
            udiff /= std::max<std::size_t>(1, sol.y.v.size() * static_cast<std::size_t>(m));
            rep.zu_diffs.push_back(zdiff + udiff);
        }
    }
    if (!(std::isfinite(rep.sup_y) && std::isfinite(rep.sup_z) && std::isfinite(rep.sup_u) &&
          std::isfinite(rep.sup_k)))
        rep.bounded = false;
    if (rep.zu_diffs.size() >= 2) {
        double head = 0;
        for (std::size_t q = 0; q + 1 < rep.zu_diffs.size(); ++q)
            head = std::max(head, rep.zu_diffs[q]);
        const double last = rep.zu_diffs.back();
        rep.cauchy = last <= std::max(1e-9, 0.5 * head);
        if (!rep.cauchy) rep.detail += " (Z,U) tail difference not vanishing";
    }
    return rep;
}

}  // namespace cbsde
