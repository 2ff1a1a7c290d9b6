#include <catch2/catch_amalgamated.hpp>

#include "cbsde/model.hpp"
#include "cbsde/problem_io.hpp"
#include "oracles.hpp"

using namespace cbsde;

TEST_CASE("structural validation accepts the deterministic two-regime instance") {
    const auto p = oracles::make_d1();
    const auto rep = validate_problem(p, 7);
    INFO(rep.summary());
    CHECK(rep.pass());
}

TEST_CASE("positive switching cost fails the cost clause with a witness") {
    const auto pf = load_problem(oracles::config_path("d1_bad_cost.json"));
    const auto rep = validate_problem(pf.problem, 7);
    CHECK_FALSE(rep.pass());
    bool found = false;
    for (const auto& c : rep.clauses)
        if (c.id.find("(H3)(iv) cost upper bound") != std::string::npos && !c.pass) {
            found = true;
            CHECK(c.witness.find("i=1") != std::string::npos);
            CHECK(c.witness.find("j=2") != std::string::npos);
        }
    CHECK(found);
}

TEST_CASE("constant costs satisfy the strict triangle clause") {
    auto p = oracles::make_d1();
    p.modes = {3, {1.0, 1.0, 1.0}};
    p.drift = CoefficientSpec::constant(1, 1, 3, 0.0);
    p.vol = CoefficientSpec::constant(1, 1, 3, 0.0);
    p.running_profit = CoefficientSpec::constant(1, 1, 3, 0.0);
    p.terminal_profit = CoefficientSpec::constant(1, 1, 3, 0.0);
    p.cost = CostSpec::uniform(3, -0.1);
    p.bounds = {0.0, 0.0, 0.1};
    const auto rep = validate_problem(p, 7);
    for (const auto& c : rep.clauses)
        if (c.id.find("triangle") != std::string::npos) CHECK(c.pass);  // -0.1 > -0.2
    CHECK(rep.pass());
}

TEST_CASE("missing or non-positive bounds raise MalformedSpec") {
    auto p = oracles::make_d1();
    p.bounds.c_bar = 0.0;
    CHECK_THROWS_AS(validate_problem(p), MalformedSpec);
    p = oracles::make_d1();
    p.bounds.psi_bar = -1.0;
    CHECK_THROWS_AS(validate_problem(p), MalformedSpec);
}

TEST_CASE("validation is deterministic given the sampling seed") {
    const auto p = oracles::make_state_dependent();
    const auto a = validate_problem(p, 12345);
    const auto b = validate_problem(p, 12345);
    CHECK(a.summary() == b.summary());
}

TEST_CASE("switching map: constraint is the negated jump plus cost") {
    const auto p = oracles::make_d1();
    const auto eq = switching_to_constrained(p);
    REQUIRE(eq.constraint.has_value());
    // h(t, y, z, v, j=2) = -v + 0.1 at any t from regime 1
    for (double v : {-0.3, 0.0, 0.25})
        CHECK(eq.constraint->value(0.37, 0, 1, 1.23, v) == Catch::Approx(-v + 0.1).margin(1e-14));
    // driver has no (y, z, u) dependence
    CHECK(eq.driver.lipschitz == 0.0);
    CHECK_FALSE(eq.driver.depends_on_u());
    CHECK_FALSE(eq.driver.depends_on_z());
}

TEST_CASE("switching map: zero running profit gives the zero driver") {
    auto p = oracles::make_d1();
    p.running_profit = CoefficientSpec::constant(1, 1, 2, 0.0);
    const auto eq = switching_to_constrained(p);
    std::vector<double> z{0.0}, u{0.0, 0.0};
    for (double t : {0.0, 0.5, 1.0})
        CHECK(eq.driver.eval(t, 1, p.x0, 3.0, z, u, p.modes.intensity) == 0.0);
}

TEST_CASE("switching map agrees with the oblique-barrier correspondence") {
    const auto p = oracles::make_d1();
    const auto eq = switching_to_constrained(p);
    const auto sys = switching_to_oblique(p);
    for (double y : {-0.5, 0.0, 0.8})
        for (double v : {-0.2, 0.0, 0.3}) {
            const double via_constraint = eq.constraint->value(0.25, 0, 1, y, v);
            const double via_barrier = y - sys.barrier_map(0.25, 0, 1, y + v);
            CHECK(via_constraint == Catch::Approx(via_barrier).margin(1e-14));
        }
}

TEST_CASE("constraint family is strictly decreasing in v with slope -1") {
    const auto p = oracles::make_d1();
    const auto eq = switching_to_constrained(p);
    const double base = eq.constraint->value(0.3, 0, 1, 0.5, 0.2);
    const double bumped = eq.constraint->value(0.3, 0, 1, 0.5, 0.2 + 0.05);
    CHECK(bumped - base == Catch::Approx(-0.05).margin(1e-14));
}

TEST_CASE("driver jump-ratio certificate is checked by sampling") {
    const auto p = oracles::make_d1();
    DriverSpec f;
    f.base = CoefficientSpec::constant(1, 1, 2, 0.0);
    f.u_coef = {0.3, 0.5};
    f.lipschitz = 1.0;
    f.jump_monotonicity = std::make_pair(0.3, 0.5);
    auto rep = validate_driver(f, p.modes, p.box, p.horizon, 3);
    INFO(rep.summary());
    CHECK(rep.pass());
    f.jump_monotonicity = std::make_pair(0.6, 0.7);  // excludes the implied 0.3
    rep = validate_driver(f, p.modes, p.box, p.horizon, 3);
    CHECK_FALSE(rep.pass());
}

TEST_CASE("oblique system assumptions pass on the switching image") {
    const auto p = oracles::make_d1();
    const auto rep = validate_oblique(switching_to_oblique(p), 3);
    INFO(rep.summary());
    CHECK(rep.pass());
}

TEST_CASE("problem files round through the schema") {
    const auto pf = load_problem(oracles::config_path("d1.json"));
    CHECK(pf.problem.modes.count == 2);
    CHECK(pf.problem.initial_mode == 0);
    CHECK(pf.problem.c(0.0, 0, 1) == Catch::Approx(-0.1));
    CHECK(pf.problem.psi(0.0, 1, pf.problem.x0) == Catch::Approx(1.0));
    CHECK_THROWS_AS(load_problem(oracles::config_path("missing.json")), MalformedSpec);
}
