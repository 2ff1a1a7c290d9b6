#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "cbsde/model.hpp"
#include "cbsde/parallel.hpp"
#include "cbsde/simulate.hpp"

namespace cbsde {

/// Regression basis, always fitted per current regime (one regression per
/// regime stratum, never regime-as-feature).
struct BasisSpec {
    enum class Kind { PolynomialPerMode, LocalPartitionPerMode, PathFeature };
    Kind kind = Kind::PolynomialPerMode;
    int degree = 2;          // total polynomial degree
    std::vector<int> cells;  // LocalPartition: cells per dimension
    StateBox box;            // LocalPartition cell geometry

    /// regression input per path: the state, plus the running-average block
    /// for the path-feature basis
    int input_dim(int state_dim) const {
        return kind == Kind::PathFeature ? 2 * state_dim : state_dim;
    }
};

namespace basis_detail {

inline std::vector<std::vector<int>> monomial_exponents(int vars, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(static_cast<std::size_t>(vars), 0);
    std::function<void(int, int)> rec = [&](int var, int remaining) {
        if (var == vars) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[static_cast<std::size_t>(var)] = e;
            rec(var + 1, remaining - e);
        }
        cur[static_cast<std::size_t>(var)] = 0;
    };
    rec(0, degree);
    std::erase_if(out, [](const std::vector<int>& e) {  // intercept handled separately
        for (int v : e)
            if (v) return false;
        return true;
    });
    return out;
}

inline int partition_cell(const BasisSpec& basis, std::span<const double> x) {
    int cell = 0, mult = 1;
    for (std::size_t j = 0; j < basis.cells.size(); ++j) {
        const int n = basis.cells[j];
        const double lo = basis.box.lo[j], hi = basis.box.hi[j];
        int c = static_cast<int>((x[j] - lo) / (hi - lo) * n);
        c = std::clamp(c, 0, n - 1);
        cell += c * mult;
        mult *= n;
    }
    return cell;
}

}  // namespace basis_detail

/// Monomial expansion of a basis over a fixed input dimension; produces the
/// non-constant columns of the design matrix. For the partition basis the
/// "expansion" is the cell index.
class BasisExpansion {
public:
    BasisExpansion() = default;
    BasisExpansion(const BasisSpec& spec, int state_dim) : spec_(spec), state_dim_(state_dim) {
        if (spec.kind != BasisSpec::Kind::LocalPartitionPerMode)
            exponents_ = basis_detail::monomial_exponents(spec.input_dim(state_dim), spec.degree);
        else {
            cells_total_ = 1;
            for (int c : spec.cells) cells_total_ *= c;
        }
    }

    const BasisSpec& spec() const { return spec_; }
    bool partition() const { return spec_.kind == BasisSpec::Kind::LocalPartitionPerMode; }
    int columns() const { return static_cast<int>(exponents_.size()); }
    int cells() const { return cells_total_; }

    void expand(std::span<const double> input, std::span<double> row) const {
        for (std::size_t c = 0; c < exponents_.size(); ++c) {
            double v = 1;
            for (std::size_t j = 0; j < exponents_[c].size(); ++j)
                for (int e = 0; e < exponents_[c][j]; ++e) v *= input[j];
            row[c] = v;
        }
    }
    int cell(std::span<const double> input) const {
        return basis_detail::partition_cell(spec_, input);
    }

private:
    BasisSpec spec_;
    int state_dim_ = 1;
    std::vector<std::vector<int>> exponents_;
    int cells_total_ = 0;
};

/// Fitted least-squares projection for one (time, regime) stratum. Design
/// columns other than the intercept are centered and scaled before the
/// trace-scaled ridge solve, so constants are reproduced exactly. Strata
/// thinner than the basis fall back to the stratum mean and are flagged
/// degenerate; the partition basis fits per-cell means directly.
class RegressionOperator {
public:
    RegressionOperator() = default;

    /// rows: row-major (count x columns) expanded design block; `members`
    /// selects the stratum's rows. Accumulation runs in member order, so the
    /// fit is independent of any caller-side parallelism.
    static RegressionOperator fit_rows(const BasisExpansion& basis,
                                       std::span<const double> rows, int columns,
                                       std::span<const int> members,
                                       std::span<const double> responses) {
        RegressionOperator op;
        op.partition_ = basis.partition();
        op.expansion_ = basis;
        const auto n = static_cast<Eigen::Index>(members.size());
        if (op.partition_) {
            op.fit_cells(basis, rows, members, responses);
            return op;
        }
        const auto p = static_cast<Eigen::Index>(columns);
        if (n == 0) {
            op.degenerate_ = true;
            return op;
        }
        double ymean = 0;
        for (int idx : members) ymean += responses[static_cast<std::size_t>(idx)];
        ymean /= static_cast<double>(n);
        op.mean_ = ymean;
        if (n < p + 1) {
            op.degenerate_ = true;
            return op;
        }
        Eigen::VectorXd center = Eigen::VectorXd::Zero(p), scale = Eigen::VectorXd::Zero(p);
        for (int idx : members)
            for (Eigen::Index c = 0; c < p; ++c)
                center(c) += rows[static_cast<std::size_t>(idx) * static_cast<std::size_t>(columns) +
                                  static_cast<std::size_t>(c)];
        center /= static_cast<double>(n);
        for (int idx : members)
            for (Eigen::Index c = 0; c < p; ++c) {
                const double v = rows[static_cast<std::size_t>(idx) * static_cast<std::size_t>(columns) +
                                      static_cast<std::size_t>(c)] -
                                 center(c);
                scale(c) += v * v;
            }
        scale = (scale / static_cast<double>(n)).cwiseSqrt();
        for (Eigen::Index c = 0; c < p; ++c)
            if (scale(c) < 1e-14) scale(c) = 1.0;  // constant column -> inert
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
        Eigen::VectorXd row(p);
        for (int idx : members) {
            for (Eigen::Index c = 0; c < p; ++c)
                row(c) = (rows[static_cast<std::size_t>(idx) * static_cast<std::size_t>(columns) +
                               static_cast<std::size_t>(c)] -
                          center(c)) /
                         scale(c);
            gram.selfadjointView<Eigen::Lower>().rankUpdate(row);
            xty += row * (responses[static_cast<std::size_t>(idx)] - ymean);
        }
        gram = gram.selfadjointView<Eigen::Lower>();
        const double ridge = 1e-8 * gram.trace() / static_cast<double>(p);
        gram.diagonal().array() += std::max(ridge, 1e-300);
        op.beta_ = gram.ldlt().solve(xty);
        op.center_ = center;
        op.scale_ = scale;
        op.intercept_ = ymean;
        return op;
    }

    double predict_row(std::span<const double> row) const {
        if (degenerate_ || partition_) return mean_;
        double v = intercept_;
        for (Eigen::Index c = 0; c < beta_.size(); ++c)
            v += beta_(c) * (row[static_cast<std::size_t>(c)] - center_(c)) / scale_(c);
        return v;
    }
    double predict_cell(int cell) const {
        if (degenerate_ || cell_counts_.empty() ||
            cell_counts_[static_cast<std::size_t>(cell)] == 0)
            return mean_;
        return cell_means_[static_cast<std::size_t>(cell)];
    }

    /// Convenience entry points used by tests and the module-level API.
    static RegressionOperator fit(const BasisSpec& basis, int state_dim,
                                  const std::vector<std::vector<double>>& inputs,
                                  std::span<const double> responses) {
        BasisExpansion exp(basis, state_dim);
        const int nb = exp.partition() ? 1 : exp.columns();
        std::vector<double> rows(inputs.size() * static_cast<std::size_t>(std::max(1, nb)));
        std::vector<int> members(inputs.size());
        for (std::size_t r = 0; r < inputs.size(); ++r) {
            members[r] = static_cast<int>(r);
            if (exp.partition())
                rows[r] = exp.cell(inputs[r]);
            else
                exp.expand(inputs[r],
                           std::span<double>(rows.data() + r * static_cast<std::size_t>(nb),
                                             static_cast<std::size_t>(nb)));
        }
        return fit_rows(exp, rows, nb, members, responses);
    }
    double predict(std::span<const double> input) const {
        if (partition_) return predict_cell(degenerate_ ? 0 : expansion_.cell(input));
        if (degenerate_) return mean_;
        std::vector<double> row(static_cast<std::size_t>(expansion_.columns()));
        expansion_.expand(input, row);
        return predict_row(row);
    }

    bool degenerate() const { return degenerate_; }

private:
    void fit_cells(const BasisExpansion& basis, std::span<const double> cell_of_row,
                   std::span<const int> members, std::span<const double> responses) {
        cell_means_.assign(static_cast<std::size_t>(basis.cells()), 0.0);
        cell_counts_.assign(static_cast<std::size_t>(basis.cells()), 0);
        if (members.empty()) {
            degenerate_ = true;
            return;
        }
        double total = 0;
        for (int idx : members) {
            const int cell = static_cast<int>(cell_of_row[static_cast<std::size_t>(idx)]);
            cell_means_[static_cast<std::size_t>(cell)] += responses[static_cast<std::size_t>(idx)];
            cell_counts_[static_cast<std::size_t>(cell)] += 1;
            total += responses[static_cast<std::size_t>(idx)];
        }
        mean_ = total / static_cast<double>(members.size());
        for (std::size_t c = 0; c < cell_means_.size(); ++c)
            if (cell_counts_[c] > 0) cell_means_[c] /= static_cast<double>(cell_counts_[c]);
    }

    BasisExpansion expansion_;
    bool partition_ = false;
    Eigen::VectorXd center_, scale_, beta_;
    double intercept_ = 0;
    bool degenerate_ = false;
    double mean_ = 0;
    std::vector<double> cell_means_;
    std::vector<long long> cell_counts_;
};

/// Per-regime value predictors at one time index.
struct ModeFits {
    std::vector<RegressionOperator> per_mode;
    bool any_degenerate = false;

    double predict_row(int mode, std::span<const double> row) const {
        return per_mode[static_cast<std::size_t>(mode)].predict_row(row);
    }
    double predict_cell(int mode, int cell) const {
        return per_mode[static_cast<std::size_t>(mode)].predict_cell(cell);
    }
};

inline void regression_input(const PathBundle& path, int k, const BasisSpec& basis,
                             std::span<double> out) {
    const auto x = path.state_at(k);
    std::copy(x.begin(), x.end(), out.begin());
    if (basis.kind == BasisSpec::Kind::PathFeature) {
        const auto f = path.feature_at(k);
        std::copy(f.begin(), f.end(), out.begin() + x.size());
    }
}

inline std::vector<double> regression_input(const PathBundle& path, int k,
                                            const BasisSpec& basis) {
    std::vector<double> in(static_cast<std::size_t>(basis.input_dim(path.dim)));
    regression_input(path, k, basis, in);
    return in;
}

/// Precomputed per-path design block at one time index: expanded monomial
/// rows (or partition cells) plus stratum membership lists in path order.
struct StepDesign {
    int columns = 1;
    bool partition = false;
    std::vector<double> rows;       // paths x columns (or cell id per path)
    std::vector<std::vector<int>> strata;  // per regime, ascending path index

    std::span<const double> row(std::size_t p) const {
        return {rows.data() + p * static_cast<std::size_t>(columns),
                static_cast<std::size_t>(columns)};
    }
    int cell(std::size_t p) const { return static_cast<int>(rows[p]); }
};

inline StepDesign build_step_design(const std::vector<PathBundle>& paths,
                                    std::span<const int> members, int k,
                                    const BasisExpansion& exp, int modes) {
    StepDesign d;
    d.partition = exp.partition();
    d.columns = d.partition ? 1 : std::max(1, exp.columns());
    d.rows.assign(members.size() * static_cast<std::size_t>(d.columns), 0.0);
    d.strata.assign(static_cast<std::size_t>(modes), {});
    const int in_dim = exp.spec().input_dim(paths.front().dim);
    parallel_for(members.size(), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> in(static_cast<std::size_t>(in_dim));
        for (std::size_t q = lo; q < hi; ++q) {
            const auto& path = paths[static_cast<std::size_t>(members[q])];
            regression_input(path, k, exp.spec(), in);
            if (d.partition)
                d.rows[q] = exp.cell(in);
            else
                exp.expand(in, std::span<double>(d.rows.data() + q * static_cast<std::size_t>(d.columns),
                                                 static_cast<std::size_t>(d.columns)));
        }
    });
    for (std::size_t q = 0; q < members.size(); ++q)
        d.strata[static_cast<std::size_t>(
                     paths[static_cast<std::size_t>(members[q])].regime[static_cast<std::size_t>(k)])]
            .push_back(static_cast<int>(q));
    return d;
}

inline ModeFits fit_strata_design(const BasisExpansion& exp, const StepDesign& design,
                                  std::span<const double> responses, int modes) {
    ModeFits fits;
    fits.per_mode.resize(static_cast<std::size_t>(modes));
    for (int i = 0; i < modes; ++i) {
        fits.per_mode[static_cast<std::size_t>(i)] =
            RegressionOperator::fit_rows(exp, design.rows, design.columns,
                                         design.strata[static_cast<std::size_t>(i)], responses);
        fits.any_degenerate |= fits.per_mode[static_cast<std::size_t>(i)].degenerate();
    }
    return fits;
}

inline double predict_design(const ModeFits& fits, const StepDesign& design, std::size_t p,
                             int mode) {
    return design.partition ? fits.predict_cell(mode, design.cell(p))
                            : fits.predict_row(mode, design.row(p));
}

/// Least-squares projection of next-step responses onto basis functions of
/// the time-k state, one regression per current-regime stratum.
inline ModeFits fit_conditional(const std::vector<PathBundle>& paths,
                                std::span<const double> responses, int k, const BasisSpec& basis,
                                int modes) {
    BasisExpansion exp(basis, paths.front().dim);
    std::vector<int> members(paths.size());
    for (std::size_t p = 0; p < paths.size(); ++p) members[p] = static_cast<int>(p);
    const auto design = build_step_design(paths, members, k, exp, modes);
    return fit_strata_design(exp, design, responses, modes);
}

/// Jump component via the cross-regime identification: on each path,
/// U_k(j) = v(k, j, X_k) - v(k, I_k, X_k) from the per-regime value
/// predictors. Layout: path-major, m entries per path.
inline std::vector<double> jump_component(const std::vector<PathBundle>& paths, int k,
                                          const ModeFits& values, const BasisSpec& basis,
                                          int modes) {
    BasisExpansion exp(basis, paths.front().dim);
    std::vector<int> members(paths.size());
    for (std::size_t p = 0; p < paths.size(); ++p) members[p] = static_cast<int>(p);
    const auto design = build_step_design(paths, members, k, exp, modes);
    std::vector<double> u(paths.size() * static_cast<std::size_t>(modes), 0.0);
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const int cur = paths[p].regime[static_cast<std::size_t>(k)];
        const double vcur = predict_design(values, design, p, cur);
        for (int j = 0; j < modes; ++j)
            u[p * static_cast<std::size_t>(modes) + static_cast<std::size_t>(j)] =
                j == cur ? 0.0 : predict_design(values, design, p, j) - vcur;
    }
    return u;
}

}  // namespace cbsde
