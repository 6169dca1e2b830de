// fedrcvar: train, sweep, eval and verify from the command line.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedrcvar/acceptance.hpp"
#include "fedrcvar/runner.hpp"

int main(int argc, char** argv) {
  using namespace fedrcvar;
  CLI::App app{"Relaxed-CVaR federated training"};
  app.require_subcommand(1);

  CommandOptions opt;
  std::string config, grid, model;
  std::vector<double> rhos;
  bool uniform = false;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--out", opt.out, "output directory");
    cmd->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* train = app.add_subcommand("train", "train one model from a config");
  train->add_option("--config", config, "run config")->required();
  train->add_option("--seed", seed, "override federation and partition seeds");
  common(train);

  auto* sweep = app.add_subcommand("sweep", "train one model per (epsilon, rho, seed) cell");
  sweep->add_option("--config", config, "base run config")->required();
  sweep->add_option("--grid", grid, "sweep grid")->required();
  sweep->add_option("--seed", seed, "override seeds of the base config");
  common(sweep);

  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  eval->add_option("--model", model, "model directory or model.json");
  eval->add_option("--config", config, "config describing the dataset")->required();
  eval->add_option("--rho", rhos, "worst-group sizes")->delimiter(',');
  eval->add_flag("--uniform", uniform, "evaluate the uniform classifier instead of a model");
  eval->add_option("--out", opt.out, "append rows to <out>/metrics.csv");

  auto* verify = app.add_subcommand("verify", "run the acceptance properties");
  std::vector<std::string> only;
  double corruption = 1.0;
  verify->add_option("--only", only, "property ids to run")->delimiter(',');
  verify->add_option("--corrupt-smoothing", corruption, "test hook: scale gamma in the surrogate")
      ->group("");
  verify->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
  verify->add_option("--scratch", opt.out, "scratch directory");
  bool list = false;
  verify->add_flag("--list", list, "list registered properties and exit");

  CLI11_PARSE(app, argc, argv);
  if (train->count("--seed") || sweep->count("--seed")) opt.seed = seed;

  if (*train) return cmd_train(config, opt, std::cout, std::cerr);
  if (*sweep) return cmd_sweep(config, grid, opt, std::cout, std::cerr);
  if (*eval) return cmd_eval(model, config, rhos, uniform, opt, std::cout, std::cerr);

  if (list) {
    for (const auto& p : acceptance::properties()) std::cout << p.id << '\t' << p.name << '\n';
    return 0;
  }
  acceptance::Hooks hooks;
  hooks.smoothing_corruption = corruption;
  hooks.threads = opt.threads > 1 ? opt.threads : 4;
  if (!opt.out.empty()) hooks.scratch = opt.out;
  const auto reports = acceptance::run_all(hooks, only, std::cout);
  std::size_t failed = 0;
  for (const auto& r : reports) failed += !r.pass;
  std::cout << reports.size() - failed << "/" << reports.size() << " properties hold\n";
  return failed ? 1 : 0;
}
