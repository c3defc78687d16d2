// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "markdiff/config.hpp"
#include "markdiff/corpus.hpp"
#include "markdiff/diffusion.hpp"
#include "markdiff/params.hpp"

namespace markdiff {

struct StepRecord {
  std::uint64_t step = 0;  // 1-based index of the completed step
  double lr = 0.0;
  diffusion::LossBundle loss;  // mean over the step's anchors
};

// Owns parameters, optimizer state and the training corpus. Every random draw
// of step s comes from streams keyed by (seed, purpose, s, item), so a
// resumed run repeats an uninterrupted one exactly.
class Trainer {
 public:
  Trainer(RunConfig cfg, Corpus corpus);

  StepRecord step();
  std::uint64_t steps_done() const noexcept { return adam_.step; }
  const ParamSet& params() const noexcept { return params_; }
  const RunConfig& config() const noexcept { return cfg_; }

  // Parameters, "adam.m.*", "adam.v.*" and "train.step".
  ParamSet state() const;
  // Throws ConfigError when names or shapes differ from this model.
  void restore(const ParamSet& state);

  double learning_rate(std::uint64_t step) const;

 private:
  RunConfig cfg_;
  ModelConfig model_;
  NoiseSchedule schedule_;
  diffusion::LossWeights weights_;
  Corpus corpus_;
  ParamSet params_;
  AdamState adam_;
};

// Splits a training checkpoint into model parameters only.
ParamSet model_params(const ParamSet& state);

std::string loss_log_header();
std::string loss_log_row(const StepRecord& r);

// ---------------------------------------------------------------------------
// Subcommands. Each throws ConfigError, NumericError, IoError or ParseError.

void cmd_corpus(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainSummary {
  std::uint64_t first_step = 0;
  std::uint64_t last_step = 0;
  double initial_total = 0.0;
  double final_total = 0.0;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
};

// Writes <out>/loss.csv, <out>/checkpoint.fsac and <out>/config.json.
TrainSummary cmd_train(const RunConfig& cfg, std::ostream& progress);

// Samples one image per markup. With `texts` empty, every corpus document is
// sampled and written under its corpus file name.
std::vector<std::filesystem::path> cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                              const std::vector<std::string>& texts,
                                              const std::filesystem::path& out_dir);

// Returns the CSV text; also writes it to `csv_path` when non-empty.
std::string cmd_eval(const std::filesystem::path& generated_dir, const std::filesystem::path& truth_dir,
                     bool allow_partial, const std::filesystem::path& csv_path);

// Returns true when every check passed.
bool cmd_verify_bounds(const RunConfig& cfg, std::ostream& out);
bool cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

}  // namespace markdiff
