#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "cbsde/switching.hpp"
#include "oracles.hpp"

using namespace cbsde;

TEST_CASE("strategy payoffs on the deterministic instance are exact") {
    const auto p = oracles::make_d1();
    const TimeGrid grid{1.0, 200};
    SECTION("switch immediately") {
        Strategy s{0, {{0.0, 1}}};
        const auto est = evaluate_strategy(p, s, grid, 500, 1);
        CHECK(est.mean == Catch::Approx(0.9).margin(1e-12));
        CHECK(est.std_error == 0.0);
    }
    SECTION("never switch") {
        Strategy s{0, {}};
        CHECK(evaluate_strategy(p, s, grid, 100, 1).mean == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("switch halfway") {
        Strategy s{0, {{0.5, 1}}};
        CHECK(evaluate_strategy(p, s, grid, 100, 1).mean == Catch::Approx(0.4).margin(1e-12));
    }
}

namespace {
struct D1Fixture {
    SwitchingProblem p;
    TimeGrid grid{1.0, 200};
    Lattice L;
    ReflectedSolution refl;
    LadderResult ladder;
    D1Fixture(double cost = -0.1, int i0 = 0)
        : p([&] {
              auto q = oracles::make_d1(cost);
              q.initial_mode = i0;
              return q;
          }()),
          L(make_lattice(p, grid)),
          refl(solve_oblique_picard(switching_to_oblique(p), L)),
          ladder(penalization_ladder_lattice(switching_to_constrained(p), L, p.box, i0, {}, 2e-4,
                                             false)) {}
};
}  // namespace

TEST_CASE("optimal strategy extraction on D1 and its variants") {
    SECTION("switch once at time zero") {
        D1Fixture f;
        const auto s = extract_optimal_strategy(f.refl, f.L, f.p, f.grid);
        REQUIRE(s.switches.size() == 1);
        CHECK(s.switches[0].first == 0.0);
        CHECK(s.switches[0].second == 1);
    }
    SECTION("prohibitive costs yield the empty strategy") {
        D1Fixture f(-2.0);
        CHECK(extract_optimal_strategy(f.refl, f.L, f.p, f.grid).switches.empty());
    }
    SECTION("starting in the profitable regime yields the empty strategy") {
        D1Fixture f(-0.1, 1);
        CHECK(extract_optimal_strategy(f.refl, f.L, f.p, f.grid).switches.empty());
    }
    SECTION("no extracted switch ever sits at the horizon") {
        D1Fixture f;
        for (const auto& [tau, to] : extract_optimal_strategy(f.refl, f.L, f.p, f.grid).switches)
            CHECK(tau < f.grid.horizon);
    }
}

TEST_CASE("strategy read off the jump component agrees with the barrier walk") {
    SECTION("base instance") {
        D1Fixture f;
        const auto ident = identify_constrained(f.refl, f.L, 0);
        const auto a = strategy_from_u(ident, f.L, f.p, f.grid);
        const auto b = extract_optimal_strategy(f.refl, f.L, f.p, f.grid);
        CHECK(a.switches == b.switches);
        REQUIRE(a.switches.size() == 1);
        CHECK(a.switches[0] == std::make_pair(0.0, 1));
    }
    SECTION("always-slack constraint yields the empty strategy") {
        D1Fixture f(-2.0);
        const auto ident = identify_constrained(f.refl, f.L, 0);
        CHECK(strategy_from_u(ident, f.L, f.p, f.grid).switches.empty());
        CHECK(extract_optimal_strategy(f.refl, f.L, f.p, f.grid).switches.empty());
    }
}

TEST_CASE("optimality certification against candidate strategies") {
    D1Fixture f;
    const auto star = extract_optimal_strategy(f.refl, f.L, f.p, f.grid);
    auto candidates = random_strategies(f.p, 50, 99);
    candidates.push_back(Strategy{0, {}});
    candidates.push_back(Strategy{0, {{0.5, 1}}});
    SECTION("the extracted strategy certifies") {
        CHECK(certify_optimality(f.p, star, candidates, f.grid, 200, 4, f.ladder.solution.y0,
                                 1e-3));
    }
    SECTION("the empty strategy does not") {
        CHECK_FALSE(certify_optimality(f.p, Strategy{0, {}}, candidates, f.grid, 200, 4,
                                       f.ladder.solution.y0, 1e-3));
    }
    SECTION("a single regime certifies trivially") {
        SwitchingProblem q = f.p;
        q.modes = {1, {1.0}};
        q.drift = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.vol = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.running_profit = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.terminal_profit = CoefficientSpec::constant(1, 1, 1, 0.0);
        q.cost = CostSpec::uniform(1, -1.0);
        CHECK(certify_optimality(q, Strategy{0, {}}, random_strategies(q, 10, 1), f.grid, 50, 2,
                                 0.0, 1e-3));
    }
}

TEST_CASE("switch counts respect the finiteness budget") {
    D1Fixture f;
    const auto s = extract_optimal_strategy(f.refl, f.L, f.p, f.grid);
    const double ybar = (f.p.horizon + 1.0) * std::max(f.p.bounds.psi_bar, f.p.bounds.g_bar);
    const double cap =
        (f.p.bounds.psi_bar * f.p.horizon + f.p.bounds.g_bar + ybar) / f.p.bounds.c_bar + 1.0;
    CHECK(static_cast<double>(s.switches.size()) <= cap);
}

TEST_CASE("policy execution matches the solver value on the stochastic instance") {
    const auto p = oracles::make_state_dependent();
    const TimeGrid grid{1.0, 50};
    const auto L = make_lattice(p, grid);
    const auto refl = solve_oblique_picard(switching_to_oblique(p), L);
    const auto lad =
        penalization_ladder_lattice(switching_to_constrained(p), L, p.box, 0, {}, 2e-4, false);
    const auto pol = run_optimal_policy(refl, L, p, grid, 20000, 11);
    INFO("policy " << pol.payoff.mean << " +- " << pol.payoff.std_error << " solver "
                   << lad.solution.y0);
    CHECK(std::fabs(pol.payoff.mean - lad.solution.y0) <=
          std::max(0.01 * std::fabs(lad.solution.y0), 3.0 * pol.payoff.std_error) + 5e-3);
}
