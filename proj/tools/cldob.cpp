// Command-line front end: run / compare / check over a key=value config.
// Exit codes: 0 success, 1 configuration or usage error, 2 divergence-tagged.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cldob/config.hpp"
#include "cldob/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  bool paper_scale = false;
};

void attach_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("config", args.config_path, "experiment config file")
      ->required();
  sub->add_option("--seed", args.seed, "override the config seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  sub->add_option("--out", args.out_dir, "override the output directory");
  sub->add_flag("--paper-scale", args.paper_scale,
                "force the large preset (n=67, h=1e-4)");
}

cldob::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  cldob::ExperimentConfig cfg = cldob::load_config(args.config_path);
  if (args.paper_scale) {
    cfg.n = 67;
    cfg.h = 1e-4;
  }
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concurrent-learning disturbance observer experiments"};
  app.require_subcommand(1);

  CommonArgs run_args, cmp_args, chk_args;
  CLI::App* run_cmd =
      app.add_subcommand("run", "simulate the configured observer mode(s)");
  attach_common(run_cmd, run_args);
  CLI::App* cmp_cmd = app.add_subcommand(
      "compare", "run both observers and emit a joint report");
  attach_common(cmp_cmd, cmp_args);
  CLI::App* chk_cmd = app.add_subcommand(
      "check", "evaluate stack-bound feasibility without simulating");
  attach_common(chk_cmd, chk_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run_cmd->parsed()) {
      return cldob::execute_run(load_with_overrides(run_args), std::cout);
    }
    if (cmp_cmd->parsed()) {
      return cldob::execute_compare(load_with_overrides(cmp_args), std::cout);
    }
    return cldob::execute_check(load_with_overrides(chk_args), std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
