#include "ces/ces.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ces::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const ces::NumericalError*>(&e)) return 3;
  if (dynamic_cast<const ces::IoError*>(&e)) return 4;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 4;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate-emulate-sample pipeline for approximate Bayesian inversion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ces::kVersion);

  std::string config_path;
  ces::Overrides overrides;
  std::optional<std::string> chain_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline configuration (JSON)")->required();
    sub->add_option("--seed", overrides.seed, "master seed (overrides the config)");
    sub->add_option("--workers", overrides.workers, "maximum concurrent workers");
    sub->add_option("--out", overrides.output_dir, "output directory (overrides the config)");
    sub->add_option("--burn-in", overrides.burn_in, "chain steps discarded before diagnostics");
  };
  auto* calibrate = app.add_subcommand("calibrate", "run EKS/EKI and write ensemble snapshots");
  auto* emulate = app.add_subcommand("emulate", "train the GP emulator on stored snapshots");
  auto* sample = app.add_subcommand("sample", "run MCMC against the emulator or the true model");
  auto* run = app.add_subcommand("run", "calibrate, emulate and sample end to end");
  auto* darcy = app.add_subcommand("darcy-uq", "forward UQ of exceedance counts for a Darcy chain");
  for (auto* sub : {calibrate, emulate, sample, run, darcy}) add_common(sub);
  darcy->add_option("--chain", chain_path, "chain CSV (default: the chain of the master seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto cfg = ces::apply_overrides(
        ces::parse_config_text(ces::read_file(config_path), config_path), overrides);
    if (*calibrate) ces::cmd_calibrate(cfg, std::cout);
    else if (*emulate) ces::cmd_emulate(cfg, std::cout);
    else if (*sample) ces::cmd_sample(cfg, std::cout);
    else if (*run) ces::cmd_run(cfg, std::cout);
    else if (*darcy) ces::cmd_darcy_uq(cfg, std::cout, chain_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 0;
}
