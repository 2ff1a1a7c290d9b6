// Config-driven experiment runner: validates problems, simulates the forward
// system, runs the constrained / reflected backward solvers, evaluates and
// extracts switching strategies, and cross-checks all value routes.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>

#include "cbsde/experiment.hpp"
#include "cbsde/parallel.hpp"

int main(int argc, char** argv) {
    CLI::App app{"constrained BSDE with jumps / optimal switching solver suite"};
    app.require_subcommand(1);

    std::string config_path, out_dir, strategy_path;
    int threads = 1;
    std::int64_t seed_override = -1;

    app.add_option("--config", config_path, "experiment config file")->required();
    app.add_option("--out", out_dir, "output directory (overrides config)");
    app.add_option("--threads", threads, "worker threads (results are thread-count independent)");
    app.add_option("--seed", seed_override, "seed override");

    auto* validate = app.add_subcommand("validate", "check the structural assumptions");
    auto* simulate = app.add_subcommand("simulate", "sample forward paths and dump them");
    auto* solve_c = app.add_subcommand("solve-constrained", "penalization ladder solve");
    auto* solve_r = app.add_subcommand("solve-reflected", "obliquely reflected system solve");
    auto* evaluate = app.add_subcommand("evaluate", "Monte Carlo payoff of a strategy file");
    evaluate->add_option("--strategy", strategy_path, "strategy JSON file")->required();
    auto* extract = app.add_subcommand("extract-strategy", "optimal strategy from the solver");
    auto* compare = app.add_subcommand("compare", "cross-check all value routes");
    auto* appendix = app.add_subcommand("verify-appendix", "cone/viability/monotone battery");

    CLI11_PARSE(app, argc, argv);
    cbsde::set_max_threads(threads);

    try {
        auto cfg = cbsde::load_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

        if (validate->parsed()) return cbsde::cmd_validate(cfg);
        if (simulate->parsed()) return cbsde::cmd_simulate(cfg);
        if (solve_c->parsed()) return cbsde::cmd_solve_constrained(cfg);
        if (solve_r->parsed()) return cbsde::cmd_solve_reflected(cfg);
        if (evaluate->parsed()) return cbsde::cmd_evaluate(cfg, strategy_path);
        if (extract->parsed()) return cbsde::cmd_extract_strategy(cfg);
        if (compare->parsed()) return cbsde::cmd_compare(cfg);
        if (appendix->parsed()) return cbsde::cmd_verify_appendix(cfg);
    } catch (const cbsde::MalformedSpec& e) {
        std::cerr << "spec error: " << e.what() << "\n";
        return cbsde::kExitValidation;
    } catch (const cbsde::NoConvergence& e) {
        std::cerr << "no convergence: " << e.what() << "\n";
        return cbsde::kExitNoConvergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
