#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbsde/rng.hpp"

namespace cbsde {

// ============================================================================
// Errors
// ============================================================================

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedSpec : Error {
    using Error::Error;
};
struct InvalidStrategy : Error {
    using Error::Error;
};
struct NoConvergence : Error {
    using Error::Error;
};
struct NonMarkovian : Error {
    using Error::Error;
};
struct IterationLimit : Error {
    using Error::Error;
};
struct NonTerminating : Error {
    using Error::Error;
};

// Margin used for strict inequalities checked in floating point.
inline constexpr double kStrictMargin = 1e-9;

// ============================================================================
// Regimes
// ============================================================================

/// Finite regime set {0..m-1} with a per-regime jump intensity.
struct ModeSet {
    int count = 1;
    std::vector<double> intensity;  // one rate per regime, all > 0

    double total_rate() const {
        double s = 0;
        for (double l : intensity) s += l;
        return s;
    }
    void validate() const {
        if (count < 1) throw MalformedSpec("ModeSet: need at least one regime");
        if (static_cast<int>(intensity.size()) != count)
            throw MalformedSpec("ModeSet: intensity size mismatch");
        for (double l : intensity)
            if (!(l > 0)) throw MalformedSpec("ModeSet: intensities must be positive");
    }
};

// ============================================================================
// State box and coefficient families
// ============================================================================

struct StateBox {
    std::vector<double> lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }
    void validate() const {
        if (lo.size() != hi.size() || lo.empty()) throw MalformedSpec("StateBox: bad bounds");
        for (std::size_t j = 0; j < lo.size(); ++j)
            if (!(lo[j] < hi[j])) throw MalformedSpec("StateBox: lo must be < hi");
    }
    void clamp(std::span<double> x) const {
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], lo[j], hi[j]);
    }
    std::vector<double> clamped(std::span<const double> x) const {
        std::vector<double> out(x.begin(), x.end());
        clamp(out);
        return out;
    }
    std::vector<double> corner(unsigned mask) const {
        std::vector<double> x(lo.size());
        for (std::size_t j = 0; j < lo.size(); ++j) x[j] = (mask >> j) & 1u ? hi[j] : lo[j];
        return x;
    }
    std::vector<double> sample(const HaltonBox& h, std::uint64_t i) const {
        std::vector<double> x(lo.size());
        for (std::size_t j = 0; j < lo.size(); ++j)
            x[j] = lo[j] + (hi[j] - lo[j]) * h.coord(i, static_cast<int>(j));
        return x;
    }
};

/// value = A * (use_abs ? |x| : x) + a, with A of shape rows x cols.
struct AffineMap {
    int rows = 1, cols = 1;
    std::vector<double> A;  // row-major rows*cols, may be empty (== zero)
    std::vector<double> a;  // rows
    bool use_abs = false;

    void eval(std::span<const double> x, std::span<double> out) const {
        for (int r = 0; r < rows; ++r) {
            double v = a.empty() ? 0.0 : a[r];
            if (!A.empty())
                for (int c = 0; c < cols; ++c) {
                    const double xc = use_abs ? std::fabs(x[c]) : x[c];
                    v += A[r * cols + c] * xc;
                }
            out[r] = v;
        }
    }
    /// Row-sum norm of A; a Lipschitz constant in the sup metric.
    double lipschitz() const {
        double best = 0;
        for (int r = 0; r < rows; ++r) {
            double s = 0;
            for (int c = 0; c < cols && !A.empty(); ++c) s += std::fabs(A[r * cols + c]);
            best = std::max(best, s);
        }
        return best;
    }
};

enum class CoeffKind { Affine, PiecewiseConstantInTime, PathFeature };

/// Per-regime coefficient from a declared parametric family. Inputs are
/// always clamped to the problem's state box before evaluation, which caps
/// the coefficient and makes the declared Lipschitz bounds global.
struct CoefficientSpec {
    CoeffKind kind = CoeffKind::Affine;
    int rows = 1;
    int input_dim = 1;  // state dim (PathFeature: state + feature block)
    std::vector<AffineMap> per_mode;
    // PiecewiseConstantInTime: shared ascending break times; bucket b applies
    // on [break[b-1], break[b]), the last bucket extends to the horizon.
    std::vector<double> time_breaks;
    std::vector<std::vector<AffineMap>> per_mode_buckets;
    std::string feature_id;           // PathFeature: "running_average"
    double declared_lipschitz = 0.0;  // PathFeature only

    bool markovian() const { return kind != CoeffKind::PathFeature; }

    const AffineMap& map_at(double t, int mode) const {
        if (kind == CoeffKind::PiecewiseConstantInTime) {
            std::size_t b = 0;
            while (b < time_breaks.size() && t >= time_breaks[b]) ++b;
            const auto& buckets = per_mode_buckets[static_cast<std::size_t>(mode)];
            return buckets[std::min(b, buckets.size() - 1)];
        }
        return per_mode[static_cast<std::size_t>(mode)];
    }

    void eval(double t, int mode, std::span<const double> x, std::span<double> out) const {
        map_at(t, mode).eval(x, out);
    }
    double eval_scalar(double t, int mode, std::span<const double> x) const {
        double v;
        eval(t, mode, x, std::span<double>(&v, 1));
        return v;
    }

    double lipschitz_bound() const {
        if (kind == CoeffKind::PathFeature) return declared_lipschitz;
        double best = 0;
        if (kind == CoeffKind::Affine)
            for (const auto& m : per_mode) best = std::max(best, m.lipschitz());
        else
            for (const auto& bs : per_mode_buckets)
                for (const auto& m : bs) best = std::max(best, m.lipschitz());
        return best;
    }

    /// sup over regimes, box corners and time buckets of max_r |value_r|.
    /// Exact for the affine families (the extremum sits at a corner).
    double sup_abs_on(const StateBox& box) const {
        double best = 0;
        std::vector<double> out(static_cast<std::size_t>(rows));
        const int d = box.dim();
        const unsigned corners = 1u << d;
        auto visit = [&](const AffineMap& m) {
            for (unsigned mask = 0; mask < corners; ++mask) {
                const auto x = box.corner(mask);
                m.eval(x, out);
                for (double v : out) best = std::max(best, std::fabs(v));
            }
            // abs-affine also attains extrema where |x| hits zero
            std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
            m.eval(zero, out);
            for (double v : out) best = std::max(best, std::fabs(v));
        };
        if (kind == CoeffKind::PiecewiseConstantInTime)
            for (const auto& bs : per_mode_buckets)
                for (const auto& m : bs) visit(m);
        else
            for (const auto& m : per_mode) visit(m);
        return best;
    }

    static CoefficientSpec constant(int rows, int dim, int modes, double value) {
        CoefficientSpec s;
        s.kind = CoeffKind::Affine;
        s.rows = rows;
        s.input_dim = dim;
        s.per_mode.assign(static_cast<std::size_t>(modes),
                          AffineMap{rows, dim, {}, std::vector<double>(rows, value), false});
        return s;
    }
    static CoefficientSpec per_mode_constants(int rows, int dim, std::span<const double> values) {
        CoefficientSpec s;
        s.kind = CoeffKind::Affine;
        s.rows = rows;
        s.input_dim = dim;
        for (double v : values)
            s.per_mode.push_back(AffineMap{rows, dim, {}, std::vector<double>(rows, v), false});
        return s;
    }
};

/// Switching cost c(t, i, j) = c0[i][j] + c1[i][j] * t  (i != j).
struct CostSpec {
    int modes = 0;
    std::vector<double> c0, c1;  // row-major m*m, diagonal ignored

    double eval(double t, int i, int j) const {
        const std::size_t k = static_cast<std::size_t>(i * modes + j);
        return c0[k] + (c1.empty() ? 0.0 : c1[k] * t);
    }
    static CostSpec uniform(int m, double c) {
        CostSpec s;
        s.modes = m;
        s.c0.assign(static_cast<std::size_t>(m) * m, c);
        for (int i = 0; i < m; ++i) s.c0[static_cast<std::size_t>(i * m + i)] = 0;
        return s;
    }
};

// ============================================================================
// Switching problem
// ============================================================================

struct ProfitBounds {
    double psi_bar = 0;  // sup |running profit|
    double g_bar = 0;    // sup |terminal profit|
    double c_bar = 0;    // costs are <= -c_bar < 0
};

struct SwitchingProblem {
    ModeSet modes;
    int dim = 1;
    std::vector<double> x0;
    int initial_mode = 0;
    double horizon = 1.0;
    CoefficientSpec drift;            // rows = dim
    CoefficientSpec vol;              // rows = dim (diagonal)
    CoefficientSpec running_profit;   // rows = 1
    CoefficientSpec terminal_profit;  // rows = 1
    CostSpec cost;
    ProfitBounds bounds;
    StateBox box;

    bool markovian() const {
        return drift.markovian() && vol.markovian() && running_profit.markovian() &&
               terminal_profit.markovian();
    }

    void eval_drift(double t, int i, std::span<const double> x, std::span<double> out) const {
        drift.eval(t, i, box.clamped(x), out);
    }
    void eval_vol(double t, int i, std::span<const double> x, std::span<double> out) const {
        vol.eval(t, i, box.clamped(x), out);
    }
    double psi(double t, int i, std::span<const double> x) const {
        return running_profit.eval_scalar(t, i, box.clamped(x));
    }
    double g(int i, std::span<const double> x) const {
        return terminal_profit.eval_scalar(horizon, i, box.clamped(x));
    }
    double c(double t, int i, int j) const { return cost.eval(t, i, j); }
};

// ============================================================================
// Generic driver / constraint / terminal specs
// ============================================================================

/// Driver from the affine family
///   f(t, i, x, y, z, u) = base(t, i, x) + y_coef*y + <z_coef, z>
///                         + sum_j u_coef[j] * u_j * lambda_j.
/// `lipschitz` is the declared certificate in (y, z, u); `jump_monotonicity`
/// is the optional (C2, C1) certificate with C1 >= C2 > -1.
struct DriverSpec {
    CoefficientSpec base;  // rows = 1
    double y_coef = 0;
    std::vector<double> z_coef;  // dim entries, may be empty
    std::vector<double> u_coef;  // m entries, may be empty
    double lipschitz = 0;
    std::optional<std::pair<double, double>> jump_monotonicity;  // (C2, C1)

    bool depends_on_u() const {
        for (double g : u_coef)
            if (g != 0) return true;
        return false;
    }
    bool depends_on_z() const {
        for (double b : z_coef)
            if (b != 0) return true;
        return false;
    }

    double eval(double t, int mode, std::span<const double> x_clamped, double y,
                std::span<const double> z, std::span<const double> u,
                std::span<const double> lambda) const {
        double v = base.eval_scalar(t, mode, x_clamped) + y_coef * y;
        for (std::size_t j = 0; j < z_coef.size() && j < z.size(); ++j) v += z_coef[j] * z[j];
        for (std::size_t j = 0; j < u_coef.size() && j < u.size(); ++j)
            v += u_coef[j] * u[j] * lambda[j];
        return v;
    }
};

/// Constraint h(t, y, z, v, j) from the declared families. All supported
/// families are non-increasing with slope -1 in v, so the penalized step sees
/// the negative part as (kink(t, i, j, y_j) - y_i)^+ under the cross-regime
/// identification u_j = y_j - y_i.
enum class ConstraintKind { SwitchingCost, ObliqueBarrier, JumpCap };

struct ConstraintSpec {
    ConstraintKind kind = ConstraintKind::SwitchingCost;
    int modes = 0;
    CostSpec cost;                      // SwitchingCost / ObliqueBarrier shift
    std::vector<double> barrier_scale;  // ObliqueBarrier: a_ij in (0,1], m*m; empty = 1
    std::vector<double> cap;            // JumpCap: per target regime

    double barrier_scale_at(int i, int j) const {
        return barrier_scale.empty() ? 1.0 : barrier_scale[static_cast<std::size_t>(i * modes + j)];
    }

    /// h(t, y, z, v, j) evaluated with current regime `cur`.
    double value(double t, int cur, int j, double y, double v) const {
        switch (kind) {
            case ConstraintKind::SwitchingCost:
                return -v - cost.eval(t, cur, j);
            case ConstraintKind::ObliqueBarrier:
                return y - (barrier_scale_at(cur, j) * (y + v) + cost.eval(t, cur, j));
            case ConstraintKind::JumpCap:
                return cap[static_cast<std::size_t>(j)] - v;
        }
        return 0;
    }

    /// d such that h^-(t, y_i, ., y_j - y_i, j) = slope * (d - y_i)^+ when the
    /// target-regime value is y_j. slope() is the |dh/dv| of the family.
    double kink(double t, int cur, int j, double y_j) const {
        switch (kind) {
            case ConstraintKind::SwitchingCost:
                return y_j + cost.eval(t, cur, j);
            case ConstraintKind::ObliqueBarrier:
                return barrier_scale_at(cur, j) * y_j + cost.eval(t, cur, j);
            case ConstraintKind::JumpCap:
                return y_j - cap[static_cast<std::size_t>(j)];
        }
        return 0;
    }
    double slope() const { return 1.0; }

    /// Lipschitz constant of h in (y, v); used by the stability guard.
    double lipschitz() const { return 2.0; }
};

struct TerminalSpec {
    CoefficientSpec value;  // rows = 1, evaluated at (T, i, x)
    double eval(double T, int mode, std::span<const double> x_clamped) const {
        return value.eval_scalar(T, mode, x_clamped);
    }
};

struct ConstrainedBsde {
    DriverSpec driver;
    std::optional<ConstraintSpec> constraint;
    TerminalSpec terminal;
};

/// Mapping of a switching problem onto the one-dimensional constrained
/// equation with jumps: driver = running profit of the current regime (no
/// (y,z,u) dependence), constraint -u_j - c(t, I, j) >= 0, terminal profit of
/// the terminal regime.
inline ConstrainedBsde switching_to_constrained(const SwitchingProblem& p) {
    ConstrainedBsde out;
    out.driver.base = p.running_profit;
    out.driver.lipschitz = 0.0;
    out.driver.jump_monotonicity = std::make_pair(0.0, 0.0);
    ConstraintSpec con;
    con.kind = ConstraintKind::SwitchingCost;
    con.modes = p.modes.count;
    con.cost = p.cost;
    out.constraint = con;
    out.terminal.value = p.terminal_profit;
    return out;
}

// ============================================================================
// Obliquely reflected system
// ============================================================================

/// Driver of component i: base(t, i, x) + <y_coef, y> + <z_coef, z_i>.
struct ObliqueDriver {
    std::vector<double> y_coef;  // m entries; off-component entries must be >= 0
    std::vector<double> z_coef;  // dim entries
};

struct ObliqueSystemSpec {
    ModeSet modes;
    int dim = 1;
    double horizon = 1.0;
    StateBox box;
    std::vector<double> x0;
    int initial_mode = 0;
    CoefficientSpec drift, vol;       // forward dynamics per regime
    CoefficientSpec driver_base;      // rows = 1, psi_i(t, x)
    std::vector<ObliqueDriver> couplings;  // per component, may be empty (== no coupling)
    CoefficientSpec terminal;         // rows = 1, xi^i = terminal(T, i, x)
    std::vector<std::vector<int>> switch_sets;  // A_i, defaults to all j != i
    bool barrier_uses_scale = false;
    std::vector<double> barrier_scale;  // a_ij, m*m
    CostSpec barrier_shift;             // c_ij(t)

    std::vector<int> targets(int i) const {
        if (!switch_sets.empty()) return switch_sets[static_cast<std::size_t>(i)];
        std::vector<int> out;
        for (int j = 0; j < modes.count; ++j)
            if (j != i) out.push_back(j);
        return out;
    }
    double barrier_map(double t, int i, int j, double yj) const {
        const double a =
            barrier_uses_scale ? barrier_scale[static_cast<std::size_t>(i * modes.count + j)] : 1.0;
        return a * yj + barrier_shift.eval(t, i, j);
    }
    double driver_eval(double t, int i, std::span<const double> x_clamped,
                       std::span<const double> y, std::span<const double> z) const {
        double v = driver_base.eval_scalar(t, i, x_clamped);
        if (!couplings.empty()) {
            const auto& cp = couplings[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < cp.y_coef.size(); ++j) v += cp.y_coef[j] * y[j];
            for (std::size_t j = 0; j < cp.z_coef.size() && j < z.size(); ++j)
                v += cp.z_coef[j] * z[j];
        }
        return v;
    }
    bool markovian() const {
        return drift.markovian() && vol.markovian() && driver_base.markovian() &&
               terminal.markovian();
    }
};

inline ObliqueSystemSpec switching_to_oblique(const SwitchingProblem& p) {
    ObliqueSystemSpec s;
    s.modes = p.modes;
    s.dim = p.dim;
    s.horizon = p.horizon;
    s.box = p.box;
    s.x0 = p.x0;
    s.initial_mode = p.initial_mode;
    s.drift = p.drift;
    s.vol = p.vol;
    s.driver_base = p.running_profit;
    s.terminal = p.terminal_profit;
    s.barrier_shift = p.cost;
    return s;
}

// ============================================================================
// Validation
// ============================================================================

struct ValidationClause {
    std::string id;
    bool pass = true;
    std::string witness;  // empty when passing
};

struct ValidationReport {
    std::vector<ValidationClause> clauses;
    bool pass() const {
        for (const auto& c : clauses)
            if (!c.pass) return false;
        return true;
    }
    std::string summary() const {
        std::ostringstream os;
        for (const auto& c : clauses) {
            os << (c.pass ? "[pass] " : "[FAIL] ") << c.id;
            if (!c.pass) os << "  witness: " << c.witness;
            os << '\n';
        }
        return os.str();
    }
};

namespace detail {
inline std::string format_point(double t, int i, int j, std::span<const double> x) {
    std::ostringstream os;
    os << "t=" << t << " i=" << (i + 1);
    if (j >= 0) os << " j=" << (j + 1);
    os << " x=(";
    for (std::size_t k = 0; k < x.size(); ++k) os << (k ? "," : "") << x[k];
    os << ")";
    return os.str();
}
}  // namespace detail

/// Sampled certification of the structural assumptions on a switching
/// problem. Quantified clauses are checked on `samples` quasi-random points
/// of the state box and time grid; failures carry the witnessing point.
inline ValidationReport validate_problem(const SwitchingProblem& p, std::uint64_t seed = 0,
                                         int samples = 10000) {
    p.modes.validate();
    p.box.validate();
    if (p.dim != p.box.dim() || static_cast<int>(p.x0.size()) != p.dim)
        throw MalformedSpec("problem: dimension mismatch between x0 and state box");
    if (!(p.horizon > 0)) throw MalformedSpec("problem: horizon must be positive");
    if (p.initial_mode < 0 || p.initial_mode >= p.modes.count)
        throw MalformedSpec("problem: initial regime out of range");
    if (!(p.bounds.c_bar > 0))
        throw MalformedSpec("problem bounds: c_bar must be positive ((H3)(iv))");
    if (p.bounds.psi_bar < 0 || p.bounds.g_bar < 0)
        throw MalformedSpec("problem bounds: psi_bar and g_bar must be non-negative");

    ValidationReport rep;
    const int m = p.modes.count;
    HaltonBox hb(seed, p.dim + 1);

    // (H3)(i): Lipschitz forward coefficients. Parametric families carry the
    // constant by construction; path-feature kinds use the declared bound.
    {
        ValidationClause c{"(H3)(i) drift/vol Lipschitz", true, ""};
        const double kb = p.drift.lipschitz_bound(), ks = p.vol.lipschitz_bound();
        if (!(std::isfinite(kb) && std::isfinite(ks))) {
            c.pass = false;
            c.witness = "non-finite Lipschitz bound";
        }
        rep.clauses.push_back(c);
    }

    // (H3)(ii): terminal structural condition g(i,x) >= max_j g(j,x) + c(T,i,j).
    {
        ValidationClause c{"(H3)(ii) terminal structural condition", true, ""};
        for (int s = 0; s < samples && c.pass; ++s) {
            const auto x = p.box.sample(hb, static_cast<std::uint64_t>(s));
            for (int i = 0; i < m && c.pass; ++i) {
                const double gi = p.g(i, x);
                for (int j = 0; j < m; ++j) {
                    if (j == i) continue;
                    if (gi < p.g(j, x) + p.c(p.horizon, i, j) - 1e-12) {
                        c.pass = false;
                        c.witness = detail::format_point(p.horizon, i, j, x);
                        break;
                    }
                }
            }
        }
        rep.clauses.push_back(c);
    }

    // (H3)(iii): boundedness of g and psi by the declared bounds.
    {
        ValidationClause c{"(H3)(iii) profit bounds", true, ""};
        const double sup_psi = p.running_profit.markovian()
                                   ? p.running_profit.sup_abs_on(p.box)
                                   : p.running_profit.declared_lipschitz;  // conservative
        const double sup_g = p.terminal_profit.markovian() ? p.terminal_profit.sup_abs_on(p.box)
                                                           : p.terminal_profit.declared_lipschitz;
        if (sup_psi > p.bounds.psi_bar + 1e-12) {
            c.pass = false;
            c.witness = "sup|psi| = " + std::to_string(sup_psi) + " exceeds psi_bar";
        } else if (sup_g > p.bounds.g_bar + 1e-12) {
            c.pass = false;
            c.witness = "sup|g| = " + std::to_string(sup_g) + " exceeds g_bar";
        }
        rep.clauses.push_back(c);
    }

    // (H3)(iv): costs upper-bounded by -c_bar, plus the strict triangle
    // condition making indirect switching unprofitable.
    {
        ValidationClause c{"(H3)(iv) cost upper bound", true, ""};
        ValidationClause tri{"(H3)(iv) strict triangle condition", true, ""};
        const int tsamples = std::max(2, samples / 100);
        for (int s = 0; s <= tsamples; ++s) {
            const double t = p.horizon * s / tsamples;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    if (i == j) continue;
                    if (c.pass && p.c(t, i, j) > -p.bounds.c_bar + 1e-12) {
                        c.pass = false;
                        c.witness = detail::format_point(t, i, j, std::span<const double>{});
                    }
                    for (int l = 0; l < m && tri.pass; ++l) {
                        if (l == j || j == i) continue;
                        if (l == i) continue;
                        if (!(p.c(t, i, l) > p.c(t, i, j) + p.c(t, j, l) + kStrictMargin)) {
                            tri.pass = false;
                            tri.witness =
                                detail::format_point(t, i, j, std::span<const double>{}) +
                                " l=" + std::to_string(l + 1);
                        }
                    }
                }
        }
        rep.clauses.push_back(c);
        rep.clauses.push_back(tri);
    }
    return rep;
}

/// Sampled (H0) certification of a driver: declared Lipschitz constant and,
/// when a (C2, C1) certificate is present, the finite-difference ratio in the
/// jump argument.
inline ValidationReport validate_driver(const DriverSpec& f, const ModeSet& modes,
                                        const StateBox& box, double horizon,
                                        std::uint64_t seed = 0, int samples = 2000) {
    ValidationReport rep;
    HaltonBox hb(seed, box.dim() + 6);
    const int m = modes.count;
    std::vector<double> z(static_cast<std::size_t>(box.dim()), 0.0);
    std::vector<double> u(static_cast<std::size_t>(m), 0.0), u2(static_cast<std::size_t>(m), 0.0);

    ValidationClause lip{"(H0)(i) declared Lipschitz constant", true, ""};
    ValidationClause ratio{"(H0)(iii) jump monotonicity ratio", true, ""};
    for (int s = 0; s < samples; ++s) {
        const auto i = static_cast<int>(static_cast<std::uint64_t>(s) % m);
        const double t = horizon * hb.coord(static_cast<std::uint64_t>(s), box.dim());
        const auto x = box.sample(hb, static_cast<std::uint64_t>(s));
        const double y = 4.0 * hb.coord(static_cast<std::uint64_t>(s), box.dim() + 1) - 2.0;
        for (int j = 0; j < box.dim(); ++j)
            z[static_cast<std::size_t>(j)] =
                4.0 * hb.coord(static_cast<std::uint64_t>(s), box.dim() + 2) - 2.0;
        for (int j = 0; j < m; ++j)
            u[static_cast<std::size_t>(j)] =
                2.0 * hb.coord(static_cast<std::uint64_t>(s) + j, box.dim() + 3) - 1.0;

        // Lipschitz in (y, z, u) along a coordinate bump.
        const double f0 = f.eval(t, i, box.clamped(x), y, z, u, modes.intensity);
        const double fy = f.eval(t, i, box.clamped(x), y + 0.5, z, u, modes.intensity);
        if (lip.pass && std::fabs(fy - f0) > f.lipschitz * 0.5 + 1e-9) {
            lip.pass = false;
            lip.witness = detail::format_point(t, i, -1, x);
        }
        if (f.jump_monotonicity) {
            const auto [c2, c1] = *f.jump_monotonicity;
            if (!(c1 >= c2 && c2 > -1.0)) {
                ratio.pass = false;
                ratio.witness = "certificate must satisfy C1 >= C2 > -1";
            } else {
                // single-coordinate perturbation: ratio equals the implied gamma
                const int j = s % m;
                u2 = u;
                u2[static_cast<std::size_t>(j)] += 1.0;
                const double df = f.eval(t, i, box.clamped(x), y, z, u2, modes.intensity) - f0;
                const double den = modes.intensity[static_cast<std::size_t>(j)];
                const double r = df / den;
                if (ratio.pass && (r < c2 - 1e-9 || r > c1 + 1e-9)) {
                    ratio.pass = false;
                    ratio.witness = detail::format_point(t, i, j, x) + " ratio=" + std::to_string(r);
                }
            }
        }
    }
    rep.clauses.push_back(lip);
    rep.clauses.push_back(ratio);
    return rep;
}

/// Sampled (H2) certification of an oblique system: terminal compatibility,
/// coupling monotonicity, barrier family properties and the strict chain
/// condition.
inline ValidationReport validate_oblique(const ObliqueSystemSpec& s, std::uint64_t seed = 0,
                                         int samples = 2000) {
    s.modes.validate();
    s.box.validate();
    ValidationReport rep;
    const int m = s.modes.count;
    HaltonBox hb(seed, s.dim + 2);

    ValidationClause term{"(H2)(i) terminal above barriers", true, ""};
    for (int k = 0; k < samples && term.pass; ++k) {
        const auto x = s.box.sample(hb, static_cast<std::uint64_t>(k));
        for (int i = 0; i < m && term.pass; ++i) {
            const double xi_i = s.terminal.eval_scalar(s.horizon, i, s.box.clamped(x));
            for (int j : s.targets(i)) {
                const double xi_j = s.terminal.eval_scalar(s.horizon, j, s.box.clamped(x));
                if (xi_i < s.barrier_map(s.horizon, i, j, xi_j) - 1e-12) {
                    term.pass = false;
                    term.witness = detail::format_point(s.horizon, i, j, x);
                    break;
                }
            }
        }
    }
    rep.clauses.push_back(term);

    ValidationClause mono{"(H2)(iii) coupling monotone off-component", true, ""};
    if (!s.couplings.empty())
        for (int i = 0; i < m && mono.pass; ++i)
            for (std::size_t j = 0; j < s.couplings[static_cast<std::size_t>(i)].y_coef.size(); ++j)
                if (static_cast<int>(j) != i &&
                    s.couplings[static_cast<std::size_t>(i)].y_coef[j] < 0) {
                    mono.pass = false;
                    mono.witness = "component " + std::to_string(i + 1) + " decreasing in y_" +
                                   std::to_string(j + 1);
                }
    rep.clauses.push_back(mono);

    ValidationClause bar{"(H2)(iv) barrier family (1-Lipschitz, increasing, h <= y)", true, ""};
    ValidationClause chain{"(H2)(iv) strict chain condition", true, ""};
    const int tsamples = 16;
    for (int st = 0; st <= tsamples; ++st) {
        const double t = s.horizon * st / tsamples;
        for (int k = 0; k < samples / 10; ++k) {
            const double y = 8.0 * hb.coord(static_cast<std::uint64_t>(k), 0) - 4.0;
            for (int i = 0; i < m; ++i)
                for (int j : s.targets(i)) {
                    const double a = s.barrier_uses_scale
                                         ? s.barrier_scale[static_cast<std::size_t>(i * m + j)]
                                         : 1.0;
                    if (bar.pass && (a <= 0.0 || a > 1.0 + 1e-12)) {
                        bar.pass = false;
                        bar.witness = "scale a_" + std::to_string(i + 1) + std::to_string(j + 1);
                    }
                    if (bar.pass && s.barrier_map(t, i, j, y) > y + 1e-12) {
                        bar.pass = false;
                        bar.witness = detail::format_point(t, i, j, std::span<const double>{}) +
                                      " y=" + std::to_string(y);
                    }
                    for (int l : s.targets(j)) {
                        if (l == i) continue;
                        // l must be switchable from i as well
                        bool found = false;
                        for (int q : s.targets(i)) found = found || q == l;
                        if (chain.pass && !found) {
                            chain.pass = false;
                            chain.witness = "A_j not contained in A_i u {i}";
                            continue;
                        }
                        const double direct = s.barrier_map(t, i, l, y);
                        const double indirect = s.barrier_map(t, i, j, s.barrier_map(t, j, l, y));
                        if (chain.pass && !(direct > indirect + kStrictMargin)) {
                            chain.pass = false;
                            chain.witness = detail::format_point(t, i, j, std::span<const double>{}) +
                                            " l=" + std::to_string(l + 1);
                        }
                    }
                }
        }
    }
    rep.clauses.push_back(bar);
    rep.clauses.push_back(chain);
    return rep;
}

}  // namespace cbsde
