// Command-line front end for the safety-filter / parameter-adaptation
// pipeline. Subcommands: simulate, generate-data, train, adapt-run,
// validate-param. Exit codes: 0 ok, 1 runtime failure, 2 configuration
// error.

#include "icc/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "scenario TOML file")
      ->required();
  cmd->add_option("--seed", args.seed, "override the scenario seed");
  cmd->add_option("--out", args.out_dir, "override the output directory");
}

icc::ScenarioConfig load(const CommonArgs& args) {
  icc::ScenarioConfig cfg = icc::load_scenario(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"input-constrained CBF safety filtering with online "
               "parameter adaptation"};
  app.require_subcommand(1);

  CommonArgs sim_args, gen_args, train_args, adapt_args, val_args;
  bool oracle = false;

  CLI::App* sim = app.add_subcommand(
      "simulate", "fixed-parameter closed-loop run with the safety filter");
  add_common(sim, sim_args);

  CLI::App* gen = app.add_subcommand(
      "generate-data", "sample scenarios and label them with the validator");
  add_common(gen, gen_args);

  CLI::App* tr = app.add_subcommand(
      "train", "train the probabilistic ensemble on a generated dataset");
  add_common(tr, train_args);

  CLI::App* ad = app.add_subcommand(
      "adapt-run", "closed-loop run with online parameter adaptation");
  add_common(ad, adapt_args);
  ad->add_flag("--oracle", oracle,
               "verify candidates by rollout instead of the ensemble");

  CLI::App* val = app.add_subcommand(
      "validate-param",
      "print the finite-horizon validation report for a (state, parameter) "
      "query as JSON");
  add_common(val, val_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return icc::run_simulate(load(sim_args));
    if (gen->parsed()) return icc::run_generate_data(load(gen_args));
    if (tr->parsed()) return icc::run_train(load(train_args));
    if (ad->parsed()) return icc::run_adapt(load(adapt_args), oracle);
    if (val->parsed()) {
      return icc::run_validate_param(load(val_args), std::cout);
    }
  } catch (const icc::ConfigError& e) {
    std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "E_RUNTIME: %s\n", e.what());
    return 1;
  }
  return 0;
}
