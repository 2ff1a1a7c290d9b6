#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <random>

#include "cbsde/lsmc.hpp"
#include "cbsde/lattice.hpp"
#include "oracles.hpp"

using namespace cbsde;

namespace {

// Hand-built bundles with a dispersed cross-section at every node; the state
// is frozen along each path (b = sigma = 0 semantics).
std::vector<PathBundle> dispersed_bundles(int count, int steps, int mode_of(int)) {
    std::vector<PathBundle> out;
    for (int p = 0; p < count; ++p) {
        PathBundle b;
        b.grid = {1.0, steps};
        b.dim = 1;
        b.dw.assign(static_cast<std::size_t>(steps), 0.0);
        b.regime.assign(static_cast<std::size_t>(steps) + 1, mode_of(p));
        const double x = -1.0 + 2.0 * p / (count - 1);
        b.state.assign(static_cast<std::size_t>(steps) + 1, x);
        b.feature = b.state;
        out.push_back(std::move(b));
    }
    return out;
}

BasisSpec poly(int degree) {
    BasisSpec b;
    b.kind = BasisSpec::Kind::PolynomialPerMode;
    b.degree = degree;
    return b;
}

}  // namespace

TEST_CASE("regression reproduces constants exactly") {
    auto paths = dispersed_bundles(200, 4, [](int) { return 0; });
    std::vector<double> resp(200, 7.0);
    const auto fits = fit_conditional(paths, resp, 2, poly(3), 1);
    for (const auto& b : paths) {
        const auto in = regression_input(b, 2, poly(3));
        CHECK(fits.per_mode[0].predict(in) == Catch::Approx(7.0).margin(1e-10));
    }
}

TEST_CASE("frozen linear responses are recovered by a degree-1 basis") {
    auto paths = dispersed_bundles(100, 4, [](int) { return 0; });
    std::vector<double> resp(100);
    for (int p = 0; p < 100; ++p) resp[static_cast<std::size_t>(p)] = paths[static_cast<std::size_t>(p)].state_at(3)[0];
    const auto fits = fit_conditional(paths, resp, 2, poly(1), 1);
    for (const auto& b : paths) {
        const auto in = regression_input(b, 2, poly(1));
        CHECK(fits.per_mode[0].predict(in) == Catch::Approx(b.state_at(2)[0]).margin(1e-7));
    }
}

TEST_CASE("fit matches the lattice conditional expectation within one percent") {
    SwitchingProblem p = oracles::make_d1();
    p.modes = {1, {1.0}};
    p.x0 = {0.5};
    p.box = {{-2.0}, {2.0}};
    p.drift.per_mode = {AffineMap{1, 1, {0.1}, {0.0}, false}};
    p.vol.per_mode = {AffineMap{1, 1, {0.1}, {0.2}, true}};
    p.running_profit = CoefficientSpec::constant(1, 1, 1, 0.0);
    p.cost = CostSpec::uniform(1, -1.0);
    p.bounds = {0.0, 4.0, 1.0};
    const int N = 25;
    const TimeGrid grid{1.0, N};
    const auto paths = sample_paths(p, grid, 100000, 31);
    auto payoff = [&](std::span<const double> xv) {
        const auto xc = p.box.clamped(xv);
        return xc[0] * xc[0];
    };
    std::vector<double> resp(paths.size());
    for (std::size_t q = 0; q < paths.size(); ++q) resp[q] = payoff(paths[q].state_at(N));
    const auto fits = fit_conditional(paths, resp, N - 1, poly(3), 1);

    const auto L = make_lattice(p, grid);
    LatticeField V(N + 1, 1, L.node_count());
    std::vector<double> x(1);
    for (int node = 0; node < L.node_count(); ++node) {
        L.node_state(node, x);
        V.at(N, 0, node) = payoff(x);
    }
    const auto ce = conditional_expectation(L, V, N - 1);

    double err2 = 0, scale2 = 0;
    for (const auto& b : paths) {
        const auto in = regression_input(b, N - 1, poly(3));
        const double fit = fits.per_mode[0].predict(in);
        const double exact = L.interpolate(ce.slice(0, 0), b.state_at(N - 1));
        err2 += (fit - exact) * (fit - exact);
        scale2 += exact * exact;
    }
    INFO("relative L2 error " << std::sqrt(err2 / scale2));
    CHECK(std::sqrt(err2 / scale2) <= 0.01);
}

TEST_CASE("jump component is the cross-regime value difference") {
    SECTION("single regime has no jump component") {
        auto paths = dispersed_bundles(50, 3, [](int) { return 0; });
        std::vector<double> resp(50, 1.0);
        const auto fits = fit_conditional(paths, resp, 1, poly(1), 1);
        const auto u = jump_component(paths, 1, fits, poly(1), 1);
        for (double v : u) CHECK(v == 0.0);
    }
    SECTION("two regimes with the D1 values give U(2) = 0.1") {
        auto paths = dispersed_bundles(60, 3, [](int p) { return p % 2; });
        std::vector<double> resp(60);
        for (int p = 0; p < 60; ++p) resp[static_cast<std::size_t>(p)] = p % 2 ? 1.0 : 0.9;
        const auto fits = fit_conditional(paths, resp, 1, poly(1), 2);
        const auto u = jump_component(paths, 1, fits, poly(1), 2);
        for (int p = 0; p < 60; ++p) {
            const double expected = p % 2 ? -0.1 : 0.1;  // other-regime value difference
            CHECK(u[static_cast<std::size_t>(p) * 2 + (p % 2 ? 0 : 1)] ==
                  Catch::Approx(expected).margin(1e-9));
            CHECK(u[static_cast<std::size_t>(p) * 2 + (p % 2 ? 1 : 0)] == 0.0);
        }
    }
    SECTION("equal per-regime values give zero jump component") {
        auto paths = dispersed_bundles(40, 3, [](int p) { return p % 2; });
        std::vector<double> resp(40, 2.5);
        const auto fits = fit_conditional(paths, resp, 1, poly(1), 2);
        for (double v : jump_component(paths, 1, fits, poly(1), 2))
            CHECK(std::fabs(v) <= 1e-10);
    }
}

TEST_CASE("two-step fit of a linear payoff obeys the tower property") {
    SwitchingProblem p = oracles::make_d1();
    p.modes = {1, {1.0}};
    p.vol = CoefficientSpec::constant(1, 1, 1, 0.3);
    p.running_profit = CoefficientSpec::constant(1, 1, 1, 0.0);
    p.terminal_profit.per_mode = {AffineMap{1, 1, {1.0}, {0.0}, false}};  // g = x
    p.cost = CostSpec::uniform(1, -1.0);
    const int N = 10;
    const auto paths = sample_paths(p, TimeGrid{1.0, N}, 20000, 8);
    std::vector<double> resp(paths.size());
    for (std::size_t q = 0; q < paths.size(); ++q) resp[q] = paths[q].state_at(N)[0];
    // direct fit at k = N-2 vs fit at N-2 of the fit at N-1
    const auto direct = fit_conditional(paths, resp, N - 2, poly(2), 1);
    const auto inner = fit_conditional(paths, resp, N - 1, poly(2), 1);
    std::vector<double> middle(paths.size());
    for (std::size_t q = 0; q < paths.size(); ++q)
        middle[q] = inner.per_mode[0].predict(regression_input(paths[q], N - 1, poly(2)));
    const auto outer = fit_conditional(paths, middle, N - 2, poly(2), 1);
    for (std::size_t q = 0; q < paths.size(); q += 1000) {
        const auto in = regression_input(paths[q], N - 2, poly(2));
        CHECK(outer.per_mode[0].predict(in) ==
              Catch::Approx(direct.per_mode[0].predict(in)).margin(5e-3));
    }
}

TEST_CASE("predictions are invariant to path ordering") {
    auto paths = dispersed_bundles(80, 3, [](int p) { return p % 2; });
    std::vector<double> resp(80);
    for (int p = 0; p < 80; ++p) resp[static_cast<std::size_t>(p)] = 0.3 * p - 1.0;
    const auto fits = fit_conditional(paths, resp, 1, poly(2), 2);

    std::vector<int> perm(80);
    for (int p = 0; p < 80; ++p) perm[static_cast<std::size_t>(p)] = p;
    std::mt19937 gen(4);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<PathBundle> shuffled;
    std::vector<double> resp2;
    for (int p : perm) {
        shuffled.push_back(paths[static_cast<std::size_t>(p)]);
        resp2.push_back(resp[static_cast<std::size_t>(p)]);
    }
    const auto fits2 = fit_conditional(shuffled, resp2, 1, poly(2), 2);
    for (const auto& b : paths) {
        const auto in = regression_input(b, 1, poly(2));
        CHECK(fits.per_mode[0].predict(in) ==
              Catch::Approx(fits2.per_mode[0].predict(in)).margin(1e-12));
    }
}

TEST_CASE("thin strata fall back to the stratum mean and are flagged") {
    auto paths = dispersed_bundles(12, 3, [](int p) { return p < 10 ? 0 : 1; });
    std::vector<double> resp(12);
    for (int p = 0; p < 12; ++p) resp[static_cast<std::size_t>(p)] = p < 10 ? 1.0 * p : 5.0;
    const auto fits = fit_conditional(paths, resp, 1, poly(3), 2);  // stratum 2 has 2 < 4 rows
    CHECK(fits.any_degenerate);
    CHECK(fits.per_mode[1].degenerate());
    const auto in = regression_input(paths[11], 1, poly(3));
    CHECK(fits.per_mode[1].predict(in) == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("partition basis predicts cell means") {
    BasisSpec b;
    b.kind = BasisSpec::Kind::LocalPartitionPerMode;
    b.cells = {4};
    b.box = {{-1.0}, {1.0}};
    auto paths = dispersed_bundles(101, 3, [](int) { return 0; });
    std::vector<double> resp(101);
    for (int p = 0; p < 101; ++p)
        resp[static_cast<std::size_t>(p)] = paths[static_cast<std::size_t>(p)].state_at(1)[0] > 0 ? 2.0 : -2.0;
    const auto fits = fit_conditional(paths, resp, 1, b, 1);
    std::vector<double> left{-0.9}, right{0.9};
    CHECK(fits.per_mode[0].predict(left) == Catch::Approx(-2.0).margin(1e-12));
    CHECK(fits.per_mode[0].predict(right) == Catch::Approx(2.0).margin(1e-12));
}
