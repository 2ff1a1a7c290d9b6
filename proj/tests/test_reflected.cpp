#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "cbsde/bsde.hpp"
#include "cbsde/reflected.hpp"
#include "oracles.hpp"

using namespace cbsde;

TEST_CASE("a single component without barriers reduces to the plain solve") {
    SwitchingProblem p = oracles::make_d1();
    p.modes = {1, {1.0}};
    p.vol = CoefficientSpec::constant(1, 1, 1, 0.25);
    p.drift = CoefficientSpec::constant(1, 1, 1, 0.1);
    p.running_profit = CoefficientSpec::constant(1, 1, 1, 0.4);
    p.terminal_profit = CoefficientSpec::constant(1, 1, 1, 0.2);
    p.cost = CostSpec::uniform(1, -1.0);
    p.bounds = {0.4, 0.2, 1.0};
    const auto L = make_lattice(p, TimeGrid{1.0, 40});
    const auto sys = switching_to_oblique(p);
    const auto eq = switching_to_constrained(p);
    const auto plain = solve_bsde_lattice(eq.driver, eq.terminal, L, p.box, 0);
    const auto pen = solve_oblique_penalized(sys, 512.0, L);
    const auto pic = solve_oblique_picard(sys, L);
    for (std::size_t q = 0; q < plain.y.v.size(); ++q) {
        CHECK(pen.y.v[q] == Catch::Approx(plain.y.v[q]).margin(1e-12));
        CHECK(pic.y.v[q] == Catch::Approx(plain.y.v[q]).margin(1e-12));
    }
    CHECK(pic.rounds_used <= 1);
    for (double v : pic.k_incr.v) CHECK(v == 0.0);
}

TEST_CASE("penalized system approaches the D1 switching values") {
    const auto p = oracles::make_d1();
    const auto L = make_lattice(p, TimeGrid{1.0, 200});
    const auto sys = switching_to_oblique(p);
    const auto sol = solve_oblique_penalized(sys, 16384.0, L);
    CHECK(sol.y0(0, &L) == Catch::Approx(0.9).margin(1e-3));
    CHECK(sol.y0(1, &L) == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("symmetric data give identical components") {
    auto p = oracles::make_d1();
    const double psis[] = {0.6, 0.6};
    p.running_profit = CoefficientSpec::per_mode_constants(1, 1, psis);
    p.bounds.psi_bar = 0.6;
    const auto L = make_lattice(p, TimeGrid{1.0, 60});
    const auto sol = solve_oblique_penalized(switching_to_oblique(p), 1024.0, L);
    for (int k = 0; k <= 60; ++k)
        CHECK(sol.y.at(k, 0, 0) == Catch::Approx(sol.y.at(k, 1, 0)).margin(1e-12));
}

TEST_CASE("iterated single-barrier route reproduces the D1 hand iteration") {
    const auto p = oracles::make_d1();
    const auto L = make_lattice(p, TimeGrid{1.0, 200});
    const auto sol = solve_oblique_picard(switching_to_oblique(p), L);
    REQUIRE(sol.rounds.size() >= 3);
    CHECK(sol.rounds[0].at(0, 0, 0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(sol.rounds[0].at(0, 1, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(sol.rounds[1].at(0, 0, 0) == Catch::Approx(0.9).margin(1e-12));
    CHECK(sol.rounds[1].at(0, 1, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(sol.rounds_used == 2);
    CHECK(sol.converged);
    SECTION("rounds never decrease anywhere") {
        for (std::size_t r = 1; r < sol.rounds.size(); ++r)
            for (std::size_t q = 0; q < sol.rounds[r].v.size(); ++q)
                CHECK(sol.rounds[r].v[q] >= sol.rounds[r - 1].v[q] - 1e-12);
    }
}

TEST_CASE("prohibitive costs stop the iteration at the unreflected round") {
    const auto p = oracles::make_d1(-2.0);
    const auto L = make_lattice(p, TimeGrid{1.0, 100});
    const auto sol = solve_oblique_picard(switching_to_oblique(p), L);
    CHECK(sol.y0(0, &L) == Catch::Approx(0.0).margin(1e-12));
    for (std::size_t q = 0; q < sol.rounds[0].v.size(); ++q)
        CHECK(sol.rounds[1].v[q] == Catch::Approx(sol.rounds[0].v[q]).margin(1e-12));
}

TEST_CASE("both routes agree on the state-dependent instance") {
    const auto p = oracles::make_state_dependent();
    const auto L = make_lattice(p, TimeGrid{1.0, 50});
    const auto sys = switching_to_oblique(p);
    const auto pen = solve_oblique_penalized(sys, 16384.0, L);
    const auto pic = solve_oblique_picard(sys, L);
    for (int i = 0; i < 2; ++i)
        CHECK(pen.y0(i, &L) == Catch::Approx(pic.y0(i, &L)).margin(1e-3));
}

TEST_CASE("identification produces the constrained quadruple") {
    const auto p = oracles::make_d1();
    const auto L = make_lattice(p, TimeGrid{1.0, 200});
    const auto sys = switching_to_oblique(p);
    const auto pic = solve_oblique_picard(sys, L);
    const auto ident = identify_constrained(pic, L, 0);
    CHECK(ident.y0 == Catch::Approx(0.9).margin(1e-9));
    CHECK(ident.u_lattice(0, 0, 0, 1) == Catch::Approx(0.1).margin(1e-9));
    // the jump constraint binds at t = 0: -U - c = -0.1 + 0.1 = 0
    const auto eq = switching_to_constrained(p);
    const double h = eq.constraint->value(0.0, 0, 1, ident.y0, ident.u_lattice(0, 0, 0, 1));
    CHECK(h == Catch::Approx(0.0).margin(1e-9));
    SECTION("constraint slack is the obstacle inequality") {
        CHECK(identification_constraint_violation(pic, sys, L) <= 1e-10);
    }
    SECTION("single component has no jump part") {
        SwitchingProblem q = p;
        q.modes = {1, {1.0}};
        q.drift = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.vol = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.running_profit = CoefficientSpec::constant(1, 1, 1, 0.3);
        q.terminal_profit = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.cost = CostSpec::uniform(1, -1.0);
        const auto Lq = make_lattice(q, TimeGrid{1.0, 20});
        const auto sq = solve_oblique_picard(switching_to_oblique(q), Lq);
        const auto idq = identify_constrained(sq, Lq, 0);
        for (int k = 0; k <= 20; ++k) CHECK(idq.u_lattice(k, 0, 0, 0) == 0.0);
    }
}

TEST_CASE("discrete flat-off condition holds on both routes") {
    const auto p = oracles::make_d1();
    const auto L = make_lattice(p, TimeGrid{1.0, 200});
    const auto sys = switching_to_oblique(p);
    CHECK(skorokhod_defect(solve_oblique_picard(sys, L), L) <= 1e-12);
    CHECK(skorokhod_defect(solve_oblique_penalized(sys, 16384.0, L), L) <= 1e-4);
}

TEST_CASE("simulation-engine reflected solve matches the lattice") {
    SECTION("deterministic instance is exact") {
        const auto p = oracles::make_d1();
        const TimeGrid grid{1.0, 100};
        const auto sys = switching_to_oblique(p);
        const auto fam = simulate_families(sys, grid, 500, 3);
        BasisSpec basis;
        basis.degree = 2;
        basis.box = p.box;
        const auto sol = solve_oblique_penalized_lsmc(sys, 4096.0, fam, basis);
        CHECK(sol.y0_by_mode[0] == Catch::Approx(0.9).margin(1e-3));
        CHECK(sol.y0_by_mode[1] == Catch::Approx(1.0).margin(1e-3));
    }
    SECTION("stochastic instance within a percent") {
        const auto p = oracles::make_state_dependent();
        const TimeGrid grid{1.0, 25};
        const auto L = make_lattice(p, grid);
        const auto sys = switching_to_oblique(p);
        const auto lat = solve_oblique_penalized(sys, 4096.0, L);
        const auto fam = simulate_families(sys, grid, 20000, 3);
        BasisSpec basis;
        basis.degree = 3;
        basis.box = p.box;
        const auto sol = solve_oblique_penalized_lsmc(sys, 4096.0, fam, basis);
        for (int i = 0; i < 2; ++i) {
            INFO("component " << i << ": lattice " << lat.y0(i, &L) << " lsmc "
                              << sol.y0_by_mode[static_cast<std::size_t>(i)]);
            CHECK(std::fabs(sol.y0_by_mode[static_cast<std::size_t>(i)] - lat.y0(i, &L)) <=
                  std::max(0.015 * std::fabs(lat.y0(i, &L)), 5e-3));
        }
    }
}
