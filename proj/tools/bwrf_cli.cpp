#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "bwrf/commands.hpp"
#include "bwrf/data.hpp"

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App *cmd, ConfigArgs &args) {
  cmd->add_option("--config", args.path, "Run configuration (key = value lines)");
  cmd->add_option("--set", args.overrides, "Override one key, e.g. --set bits=2")->allow_extra_args(false);
}

bwrf::RunConfig resolve(const ConfigArgs &args) {
  bwrf::RunConfig cfg = args.path.empty() ? bwrf::RunConfig{} : bwrf::RunConfig::load(args.path);
  for (const auto &o : args.overrides) cfg.apply_override(o);
  return cfg;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Block-wise replacement training for low-precision residual networks"};
  app.require_subcommand(1);

  ConfigArgs fp_args, bwrf_args, base_args, eval_args, sim_args;
  auto *train_fp = app.add_subcommand("train-fp", "Train the full-precision model");
  add_config_options(train_fp, fp_args);
  auto *train_bwrf = app.add_subcommand("train-bwrf", "Train a low-precision model with grafted FP blocks");
  add_config_options(train_bwrf, bwrf_args);
  auto *train_base = app.add_subcommand("train-baseline", "Plain quantization-aware training");
  add_config_options(train_base, base_args);
  auto *eval = app.add_subcommand("eval", "Top-1/top-5 of one branch on the test split");
  add_config_options(eval, eval_args);
  std::string branch = "Q";
  eval->add_option("--branch", branch, "Q, F or M<k>");
  auto *sim = app.add_subcommand("analyze-similarity", "Cosine similarity of LP and FP block features");
  add_config_options(sim, sim_args);

  auto *synth = app.add_subcommand("make-synthetic-cifar", "Write a synthetic dataset in CIFAR-10 binary format");
  std::string synth_out;
  std::size_t train_per_class = 500, test_per_class = 100;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--train-per-class", train_per_class);
  synth->add_option("--test-per-class", test_per_class);
  synth->add_option("--seed", synth_seed);

  CLI11_PARSE(app, argc, argv);

  return bwrf::run_guarded(
      [&]() -> int {
        if (train_fp->parsed()) return bwrf::cmd_train_fp(resolve(fp_args), std::cerr);
        if (train_bwrf->parsed()) return bwrf::cmd_train_bwrf(resolve(bwrf_args), std::cerr);
        if (train_base->parsed()) return bwrf::cmd_train_baseline(resolve(base_args), std::cerr);
        if (eval->parsed()) return bwrf::cmd_eval(resolve(eval_args), branch, std::cout);
        if (sim->parsed()) return bwrf::cmd_analyze_similarity(resolve(sim_args), std::cout);
        bwrf::write_cifar10_dir(synth_out, bwrf::make_synthetic_cifar(train_per_class, test_per_class, synth_seed));
        return bwrf::kExitOk;
      },
      std::cerr);
}
