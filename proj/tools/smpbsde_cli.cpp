#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "smpbsde/smpbsde.hpp"

namespace {

struct CliArgs {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
  int desk_scale = 0;
};

smpbsde::ExperimentConfig resolve(const CliArgs& args) {
  smpbsde::ConfigMap cm;
  if (!args.config.empty()) cm = smpbsde::load_config(args.config);
  smpbsde::ExperimentConfig cfg = smpbsde::experiment_from_config(cm);
  if (!args.out.empty()) cfg.out = args.out;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.desk_scale > 0) cfg.desk_scale = args.desk_scale;
  smpbsde::validate_experiment(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, CliArgs& args) {
  cmd->add_option("--config", args.config, "experiment configuration file");
  cmd->add_option("--out", args.out, "output directory override");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--desk-scale", args.desk_scale,
                  "shrink batch, validation and iteration budgets by this factor")
      ->check(CLI::IsMember({1, 2, 4, 8}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep solver and semi-analytic references for "
               "linear-quadratic stochastic control"};
  app.require_subcommand(1);

  CliArgs args;
  auto* ref = app.add_subcommand(
      "reference", "solve the value ODE and print the reference quantities");
  auto* train = app.add_subcommand("train", "train and score on each grid");
  auto* conv = app.add_subcommand(
      "convergence", "train across grids and fit error rates in the step size");
  auto* report = app.add_subcommand("report", "print the written summaries");
  for (auto* cmd : {ref, train, conv, report}) add_common(cmd, args);

  CLI11_PARSE(app, argc, argv);

  try {
    const smpbsde::ExperimentConfig cfg = resolve(args);
    if (ref->parsed()) return smpbsde::cmd_reference(cfg, std::cout);
    if (train->parsed()) return smpbsde::cmd_train(cfg, std::cout);
    if (conv->parsed()) return smpbsde::cmd_convergence(cfg, std::cout);
    return smpbsde::cmd_report(cfg, std::cout);
  } catch (const smpbsde::Error& e) {
    std::cerr << "error: " << smpbsde::to_string(e.category()) << ": "
              << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: unknown: " << e.what() << "\n";
    return 3;
  }
}
