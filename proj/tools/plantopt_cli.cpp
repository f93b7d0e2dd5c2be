// plantopt --config PATH [--mode solve|validate|simulate] [--out DIR]
//          [--snapshots t1,t2,...] [--emit-plots] [--threads N] [--seed N]

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "plantopt/cli_runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Gas-fired plant valuation by explicit finite differences"};
  std::string config_path, mode, out;
  std::vector<double> snapshots;
  bool emit_plots = false;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "TOML run configuration")->required();
  app.add_option("--mode", mode, "solve | validate | simulate")->check(CLI::IsMember({"solve", "validate", "simulate"}));
  app.add_option("--out", out, "output directory");
  app.add_option("--snapshots", snapshots, "comma-separated tau values (hours)")->delimiter(',');
  app.add_flag("--emit-plots", emit_plots, "write matplotlib scripts next to the CSVs");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Monte Carlo seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : plantopt::exit_code::config;
  }

  plantopt::RunConfig cfg;
  try {
    cfg = plantopt::load_config(config_path);
    if (!mode.empty()) cfg.mode = plantopt::parse_run_mode(mode);
    if (!out.empty()) cfg.outputs = out;
    if (!snapshots.empty()) {
      for (double tau : snapshots)
        if (!(tau >= 0.0 && tau <= cfg.model.horizon)) throw plantopt::ConfigError("--snapshots: tau must lie in [0, horizon]");
      cfg.snapshots = snapshots;
    }
    if (emit_plots) cfg.emit_plots = true;
    if (threads) cfg.threads = *threads;
    if (seed) cfg.simulation.paths.seed = *seed;
  } catch (const plantopt::ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return plantopt::exit_code::config;
  } catch (const plantopt::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return plantopt::exit_code::io;
  }
  return plantopt::run(cfg);
}
