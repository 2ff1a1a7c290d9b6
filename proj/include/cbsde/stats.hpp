#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace cbsde {

// Regularized incomplete gamma functions, series + continued fraction.
namespace detail {

inline double gamma_p_series(double a, double x) {
    double sum = 1.0 / a, term = sum, ap = a;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p: bad arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_contfrac(a, x);
}

inline double gamma_q(double a, double x) { return 1.0 - gamma_p(a, x); }

/// Survival function of the chi-square distribution with `dof` degrees.
inline double chi_square_sf(double x, double dof) {
    if (x <= 0.0) return 1.0;
    return gamma_q(0.5 * dof, 0.5 * x);
}

inline double poisson_pmf(int k, double mean) {
    return std::exp(-mean + k * std::log(mean) - std::lgamma(k + 1.0));
}

/// Pearson chi-square goodness-of-fit of observed counts against Poisson(mean).
/// Bins with expected count below 5 are pooled into the neighbouring bin.
/// Returns the p-value.
inline double poisson_gof_pvalue(std::span<const long long> counts, double mean) {
    const double total = [&] {
        double s = 0;
        for (auto c : counts) s += static_cast<double>(c);
        return s;
    }();
    if (total <= 0) throw std::invalid_argument("poisson_gof_pvalue: empty sample");
    std::vector<double> observed, expected;
    double acc_obs = 0, acc_exp = 0, tail = 1.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const bool last = k + 1 == counts.size();
        const double pk = last ? tail : poisson_pmf(static_cast<int>(k), mean);
        tail -= last ? 0.0 : pk;
        acc_obs += static_cast<double>(counts[k]);
        acc_exp += (last ? tail + pk : pk) * total;
        if (acc_exp >= 5.0 || last) {
            observed.push_back(acc_obs);
            expected.push_back(acc_exp);
            acc_obs = acc_exp = 0;
        }
    }
    if (expected.size() < 2) return 1.0;
    if (expected.back() < 5.0 && expected.size() > 1) {
        expected[expected.size() - 2] += expected.back();
        observed[observed.size() - 2] += observed.back();
        expected.pop_back();
        observed.pop_back();
    }
    double stat = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const double d = observed[i] - expected[i];
        stat += d * d / expected[i];
    }
    return chi_square_sf(stat, static_cast<double>(expected.size() - 1));
}

struct MeanStderr {
    double mean = 0;
    double std_error = 0;
    long long count = 0;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
    MeanStderr r;
    r.count = static_cast<long long>(xs.size());
    if (xs.empty()) return r;
    bool all_equal = true;
    for (double x : xs) all_equal = all_equal && x == xs.front();
    if (all_equal) {  // degenerate sample: exact zero instead of mean roundoff
        r.mean = xs.front();
        return r;
    }
    double s = 0;
    for (double x : xs) s += x;
    r.mean = s / static_cast<double>(xs.size());
    double v = 0;
    for (double x : xs) v += (x - r.mean) * (x - r.mean);
    if (xs.size() > 1)
        r.std_error = std::sqrt(v / (static_cast<double>(xs.size() - 1))) /
                      std::sqrt(static_cast<double>(xs.size()));
    return r;
}

}  // namespace cbsde
