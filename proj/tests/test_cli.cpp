#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "oracles.hpp"

namespace {

std::string cli_path() {
    const char* env = std::getenv("CBSDE_CLI");
    REQUIRE(env != nullptr);
    return env;
}

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args, const std::string& tag) {
    const std::string log = "cli_" + tag + ".log";
    const std::string cmd = cli_path() + " " + args + " > " + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    return {WEXITSTATUS(rc), ss.str()};
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    nlohmann::json j;
    is >> j;
    return j;
}

std::string cfg(const std::string& name) { return oracles::config_path(name); }

}  // namespace

TEST_CASE("validate accepts the base instance", "[cli]") {
    const auto r = run_cli("--config " + cfg("exp_d1_lattice.json") + " --out cli_val validate",
                           "validate");
    INFO(r.output);
    CHECK(r.exit_code == 0);
}

TEST_CASE("a malformed cost sign exits 2 naming the clause", "[cli]") {
    const auto r = run_cli("--config " + cfg("exp_d1_bad_cost.json") + " --out cli_bad validate",
                           "badcost");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("(H3)(iv)") != std::string::npos);
}

TEST_CASE("solve-constrained reproduces the deterministic value", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_lattice.json") + " --out cli_solve solve-constrained", "solve");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const auto summary = read_json("cli_solve/summary.json");
    CHECK(std::fabs(summary.at("y0").get<double>() - 0.9) <= 1e-3);
    CHECK(summary.at("converged").get<bool>());
    const auto pen = read_json("cli_solve/penalization.json");
    CHECK(pen.at("monotone").get<bool>());
    CHECK(std::filesystem::exists("cli_solve/solution.csv"));
}

TEST_CASE("solve-constrained on a malformed problem exits 2", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_bad_cost.json") + " --out cli_bad2 solve-constrained", "solve2");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("(H3)(iv)") != std::string::npos);
}

TEST_CASE("single-regime linear-driver file matches the closed form", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_single_mode.json") + " --out cli_single solve-constrained",
        "single");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const auto summary = read_json("cli_single/summary.json");
    CHECK(std::fabs(summary.at("y0").get<double>() - std::exp(-0.1)) <= 1e-4);
}

TEST_CASE("evaluate scores a strategy file", "[cli]") {
    {
        std::ofstream os("cli_strat.json");
        os << R"({"i0": 1, "switches": [{"t": 0.0, "to": 2}]})";
    }
    const auto r = run_cli("--config " + cfg("exp_d1_lattice.json") +
                               " --out cli_eval evaluate --strategy cli_strat.json",
                           "eval");
    REQUIRE(r.exit_code == 0);
    const auto payoff = read_json("cli_eval/payoff.json");
    CHECK(std::fabs(payoff.at("mean").get<double>() - 0.9) <= 1e-12);
    CHECK(payoff.at("stderr").get<double>() == 0.0);

    const auto r0 = run_cli("--config " + cfg("exp_d1_lattice.json") +
                                " --out cli_eval0 evaluate --strategy cli_missing.json",
                            "eval0");
    CHECK(r0.exit_code == 2);
}

TEST_CASE("solve-reflected emits per-regime files and route agreement", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_lattice.json") + " --out cli_refl solve-reflected", "refl");
    REQUIRE(r.exit_code == 0);
    const auto routes = read_json("cli_refl/routes.json");
    CHECK(std::fabs(routes.at("y0_picard").at(0).get<double>() - 0.9) <= 1e-3);
    CHECK(std::fabs(routes.at("y0_picard").at(1).get<double>() - 1.0) <= 1e-3);
    CHECK(routes.at("route_gap").get<double>() <= 1e-3);
    CHECK(std::filesystem::exists("cli_refl/reflected_1.csv"));
    CHECK(std::filesystem::exists("cli_refl/reflected_2.csv"));
}

TEST_CASE("disagreeing routes exit 4 under a strict tolerance", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_route_strict.json") + " --out cli_refl4 solve-reflected",
        "refl4");
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("routes disagree") != std::string::npos);
}

TEST_CASE("compare cross-checks all value routes on D1", "[cli]") {
    const auto r =
        run_cli("--config " + cfg("exp_d1_lattice.json") + " --out cli_cmp compare", "cmp");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const auto cmp = read_json("cli_cmp/compare.json");
    CHECK(cmp.at("ok").get<bool>());
    const auto strat = read_json("cli_cmp/strategy.json");
    CHECK(strat.at("switches").size() == 1);
}

TEST_CASE("a breached tolerance exits 4 with the table written", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_compare_strict.json") + " --out cli_cmp4 compare", "cmp4");
    CHECK(r.exit_code == 4);
    const auto cmp = read_json("cli_cmp4/compare.json");
    CHECK_FALSE(cmp.at("ok").get<bool>());
}

TEST_CASE("verify-appendix runs the numerical battery", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_lattice.json") + " --out cli_app verify-appendix", "appendix");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const auto app = read_json("cli_app/appendix.json");
    CHECK(app.at("ok").get<bool>());
    CHECK(app.at("picard_rounds_monotone").get<bool>());
}

TEST_CASE("simulate dumps columnar path files", "[cli]") {
    const auto r = run_cli(
        "--config " + cfg("exp_d1_lattice.json") + " --out cli_sim simulate", "sim");
    REQUIRE(r.exit_code == 0);
    std::ifstream is("cli_sim/path_0.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,I,X_1");
}
