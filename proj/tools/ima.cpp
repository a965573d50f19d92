#include "ima/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  CLI::App app{"Increasing-margin adversarial training toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", ima::cli::version());

  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  int jobs = 1;
  bool checkpoint_sweep = false;

  app.add_option("-c,--config", config_path, "config file ([section] key = value)");
  app.add_option("-o,--out", out, "output directory (overrides run.out)");
  app.add_option("-s,--seed", seed, "global seed (overrides run.seed)");
  app.add_option("-D,--set", overrides, "override section.key=value; repeatable");
  app.add_option("-j,--jobs", jobs, "parallel sweep workers")->check(CLI::PositiveNumber);
  app.add_flag("--checkpoint-sweep", checkpoint_sweep, "eval: evaluate every ckpt_epoch*.ckpt in eval.checkpoint");
  auto* print = app.add_flag("--print-config", "print the resolved config and exit");

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  auto* train = app.add_subcommand("train", "train a model (ima, adv, ce)");
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints");
  auto* sweep = app.add_subcommand("sweep", "train + eval over a parameter grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ima::cli::Context ctx;
  try {
    if (!config_path.empty()) ctx.cfg.load_file(config_path);
    for (const auto& o : overrides) ctx.cfg.apply_override(o);
    if (out) ctx.cfg.set("run.out", *out);
    if (seed) ctx.cfg.set("run.seed", std::to_string(*seed));
  } catch (const ima::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  }
  ctx.jobs = jobs;
  ctx.checkpoint_sweep = checkpoint_sweep;
  if (*print) {
    std::cout << ctx.cfg.resolved();
    return 0;
  }

  if (gen->parsed()) return ima::cli::run_guarded(ctx, ima::cli::cmd_generate);
  if (train->parsed()) return ima::cli::run_guarded(ctx, ima::cli::cmd_train);
  if (eval->parsed()) return ima::cli::run_guarded(ctx, ima::cli::cmd_eval);
  if (sweep->parsed()) return ima::cli::run_guarded(ctx, ima::cli::cmd_sweep);
  return 2;
}
