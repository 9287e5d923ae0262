#include <CLI11.hpp>

#include <iostream>

#include "srfrn/pipeline.hpp"

using namespace srfrn;

namespace {

void add_common(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--scale,-s", c.scale, "Upscaling factor")->check(CLI::Range(1, 4))->capture_default_str();
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--weights,-w", c.weights, "Weight file (default <out-dir>/best.srfrn)");
  cmd->add_option("--out-dir,-o", c.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--shave", c.shave, "Border pixels excluded from metrics (-1: scale)")->capture_default_str();
  cmd->add_flag("!--no-antialias", c.antialias, "Plain 4-tap kernel when synthesizing LR images");
}

void add_data(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--manifest,-m", c.manifest, "TSV manifest: path, split, dataset")->required();
}

void add_training(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--cache", c.cache_dir, "Patch cache directory")->capture_default_str();
  cmd->add_option("--blocks,-n", c.n_blocks, "RFR blocks")->check(CLI::Range(1, 7))->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", c.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--lr", c.lr, "Initial learning rate")->capture_default_str();
  cmd->add_option("--patience", c.patience, "Plateau patience in epochs")->capture_default_str();
  cmd->add_option("--lr-factor", c.lr_factor, "Plateau reduction factor")->capture_default_str();
  cmd->add_option("--min-lr", c.min_lr, "Learning rate floor")->capture_default_str();
  cmd->add_option("--rel-threshold", c.rel_threshold, "Relative improvement that resets patience")
      ->capture_default_str();
  cmd->add_option("--max-steps", c.max_steps, "Stop after this many optimizer steps (0: no cap)");
  cmd->add_option("--time-budget", c.time_budget_s, "Stop starting epochs after this many seconds (0: no cap)");
  cmd->add_flag("!--no-deterministic", c.deterministic, "Allow background batch prefetch");
  cmd->add_flag("--feature-activation", c.feature_activation, "Leaky ReLU after the feature layers");
}

int run(int argc, char** argv) {
  CLI::App app{"srfrn: single-image super-resolution with residual feature representative blocks"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option values");
  RunConfig c;

  auto* prepare = app.add_subcommand("prepare", "Build the training/validation patch cache");
  add_common(prepare, c);
  add_data(prepare, c);
  prepare->add_option("--cache", c.cache_dir, "Patch cache directory")->capture_default_str();
  prepare->add_option("--patch", c.patch, "Patch side")->capture_default_str();
  prepare->add_option("--stride", c.stride, "Patch stride")->capture_default_str();
  prepare->add_option("--val-fraction", c.val_fraction, "Validation share when the manifest has none")
      ->capture_default_str();
  prepare->add_flag("!--no-augment", c.augment, "Skip the x8 dihedral augmentation");

  auto* train = app.add_subcommand("train", "Train from a patch cache");
  add_common(train, c);
  add_training(train, c);
  train->add_flag("--resume", c.resume, "Continue from <out-dir>/last.*");

  std::filesystem::path input, output;
  auto* sr = app.add_subcommand("sr", "Super-resolve one image");
  add_common(sr, c);
  sr->add_option("input", input, "LR PNG")->required()->check(CLI::ExistingFile);
  sr->add_option("output", output, "Output PNG")->required();

  std::string mode = "network";
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM on the manifest's test entries");
  add_common(eval, c);
  add_data(eval, c);
  eval->add_option("--mode", mode, "network | bicubic | identity")
      ->check(CLI::IsMember({"network", "bicubic", "identity"}))
      ->capture_default_str();

  BenchOptions bopt;
  auto* bench = app.add_subcommand("bench", "Forward latency per scale at a fixed output size");
  add_common(bench, c);
  bench->add_option("--blocks,-n", c.n_blocks, "RFR blocks when no weights are given")->capture_default_str();
  bench->add_option("--scales", bopt.scales, "Scales to time")->capture_default_str();
  bench->add_option("--width", bopt.out_width, "HR output width")->capture_default_str();
  bench->add_option("--height", bopt.out_height, "HR output height")->capture_default_str();
  bench->add_option("--reps", bopt.repetitions, "Timed repetitions")->capture_default_str();
  bench->add_option("--warmup", bopt.warmup, "Untimed warm-up runs")->capture_default_str();
  bench->add_option("--image", bopt.image, "PNG to take content from")->check(CLI::ExistingFile);

  std::vector<std::size_t> blocks{1, 2, 3, 4, 5, 6, 7};
  auto* ablate = app.add_subcommand("ablate", "Train and validate one model per block count");
  add_common(ablate, c);
  add_training(ablate, c);
  ablate->add_option("--blocks-list", blocks, "Block counts")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*prepare) cmd_prepare(c, std::cout);
    if (*train) cmd_train(c, std::cout);
    if (*sr) cmd_sr(c, input, output, std::cout);
    if (*eval) cmd_eval(c, parse_eval_mode(mode), std::cout);
    if (*bench) cmd_bench(c, bopt, std::cout);
    if (*ablate) cmd_ablate(c, blocks, std::cout);
  } catch (const Error& e) {
    std::cerr << "srfrn: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "srfrn: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
