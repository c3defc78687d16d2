// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "markdiff/config.hpp"
#include "markdiff/errors.hpp"
#include "markdiff/trainer.hpp"

extern char** environ;

namespace {

enum ExitCode : int { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> markup;
  std::string generated;
  std::string truth;
  bool allow_partial = false;
};

markdiff::RunConfig resolve(const Options& o) {
  markdiff::RunConfig cfg = o.config_path.empty() ? markdiff::RunConfig{} : markdiff::load_config(o.config_path);
  markdiff::apply_env_overrides(cfg, environ);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"markdiff: contrast-augmented diffusion for markup-to-image generation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration");
  app.add_option("--seed", o.seed, "Override the global seed");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--threads", o.threads, "Worker threads for per-item evaluation (1 = bitwise reproducible)");

  auto* corpus = app.add_subcommand("corpus", "Generate the synthetic markup corpus");
  auto* train = app.add_subcommand("train", "Train encoders and the noise estimator");
  train->add_option("--resume", o.checkpoint, "Resume from a training checkpoint");
  auto* sample = app.add_subcommand("sample", "Sample images from a checkpoint");
  sample->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  sample->add_option("--markup", o.markup, "Markup text (repeatable); default: every corpus document");
  auto* eval = app.add_subcommand("eval", "Compare generated images against ground truth");
  eval->add_option("generated", o.generated, "Directory of generated images")->required();
  eval->add_option("truth", o.truth, "Directory of ground-truth images")->required();
  eval->add_flag("--allow-partial", o.allow_partial, "Skip unmatched file names instead of failing");
  auto* verify = app.add_subcommand("verify-bounds", "Check the bound identities on Gaussian chains");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every registered loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const markdiff::RunConfig base = resolve(o);
    if (corpus->parsed()) {
      markdiff::cmd_corpus(base, o.out.empty() ? base.corpus_dir : o.out);
    } else if (train->parsed()) {
      markdiff::RunConfig cfg = base;
      if (!o.out.empty()) cfg.out_dir = o.out;
      if (!o.checkpoint.empty()) cfg.resume_from = o.checkpoint;
      const auto s = markdiff::cmd_train(cfg, std::cerr);
      std::cout << "trained steps " << s.first_step << ".." << s.last_step << ", total " << s.initial_total << " -> "
                << s.final_total << "\ncheckpoint " << s.checkpoint.string() << "\n";
    } else if (sample->parsed()) {
      const auto files = markdiff::cmd_sample(base, o.checkpoint, o.markup, o.out.empty() ? "samples" : o.out);
      for (const auto& f : files) std::cout << f.string() << '\n';
    } else if (eval->parsed()) {
      const std::string csv_path = o.out.empty() ? "" : (std::filesystem::path(o.out) / "metrics.csv").string();
      if (!o.out.empty()) std::filesystem::create_directories(o.out);
      std::cout << markdiff::cmd_eval(o.generated, o.truth, o.allow_partial, csv_path);
    } else if (verify->parsed()) {
      if (!markdiff::cmd_verify_bounds(base, std::cout)) return kNumeric;
    } else if (grad->parsed()) {
      if (!markdiff::cmd_gradcheck(base, std::cout)) return kNumeric;
    }
  } catch (const markdiff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const markdiff::ParseError& e) {
    std::cerr << "markup error: " << e.what() << '\n';
    return kConfig;
  } catch (const markdiff::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const markdiff::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::logic_error& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
  return kOk;
}
