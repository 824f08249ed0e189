// Command-line front end: `cfsense run --config cfg.json [overrides]` and
// `cfsense selftest`. Exit codes: 0 success, 1 tool failure, 2 bad
// configuration.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cfsense/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"counterfactual fairness sensitivity tools"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "execute a configured analysis");
  std::string config_path;
  std::string tool_override;
  std::string budgets_override;
  std::string p_grid_override;
  std::string out_override;
  std::int64_t seed_override = -1;
  int threads_override = 0;
  run_cmd->add_option("--config", config_path, "JSON run configuration")
      ->required();
  run_cmd->add_option("--tool", tool_override,
                      "override tool: grid, maxcfu, baselines, all");
  run_cmd->add_option("--budgets", budgets_override,
                      "override correlation budgets, lo:hi:count");
  run_cmd->add_option("--p-grid", p_grid_override,
                      "override grid correlations, lo:hi:count");
  run_cmd->add_option("--out", out_override, "override output directory");
  run_cmd->add_option("--seed", seed_override, "override random seed");
  run_cmd->add_option("--threads", threads_override,
                      "override grid sweep thread count");

  auto* selftest_cmd =
      app.add_subcommand("selftest", "run the built-in verification battery");

  CLI11_PARSE(app, argc, argv);

  if (selftest_cmd->parsed()) return cfsense::selftest();

  try {
    cfsense::RunConfig rc = cfsense::load_config(config_path);
    if (!tool_override.empty()) {
      if (tool_override != "grid" && tool_override != "maxcfu" &&
          tool_override != "baselines" && tool_override != "all")
        throw cfsense::ConfigError("--tool",
                                   "expected grid, maxcfu, baselines, or all");
      rc.tool = tool_override;
    }
    if (!budgets_override.empty())
      rc.budgets = cfsense::cfg::parse_grid_string(budgets_override, "--budgets");
    if (!p_grid_override.empty())
      rc.p_grid = cfsense::cfg::parse_grid_string(p_grid_override, "--p-grid");
    if (!out_override.empty()) rc.out_dir = out_override;
    if (seed_override >= 0) {
      rc.seed = static_cast<std::uint64_t>(seed_override);
      rc.pipeline.seed = rc.seed;
      rc.optimizer.seed = rc.seed;
    }
    if (threads_override > 0)
      rc.threads = static_cast<unsigned>(threads_override);
    return cfsense::run(rc);
  } catch (const cfsense::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
