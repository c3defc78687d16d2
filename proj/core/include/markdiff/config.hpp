// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "markdiff/diffusion.hpp"
#include "markdiff/schedule.hpp"
#include "markdiff/unet.hpp"

namespace markdiff {

struct RunConfig {
  std::uint64_t seed = 7;

  // Data
  std::size_t image_height = 32;
  std::size_t image_width = 128;
  std::size_t corpus_size = 8;

  // Model
  std::size_t d_model = 64;
  std::size_t max_tokens = 48;
  std::array<std::size_t, 4> encoder_channels{16, 32, 64, 64};
  std::array<std::size_t, 3> unet_channels{8, 16, 32};
  std::size_t attn_dim = 32;
  std::size_t time_dim = 32;
  std::size_t ccam_blocks = 2;
  std::size_t crossattn_blocks = 2;

  // Diffusion
  std::size_t T = 50;
  double beta_start = 0.002;
  double beta_end = 0.4;

  // Objective
  double lambda = 0.005;
  double beta_fa = 0.02;
  double tau = 0.5;
  std::size_t num_negatives = 5;
  double exp_clamp = 10.0;
  std::string cl_denominator = "with_positive";

  // Optimization
  std::size_t batch = 8;
  std::size_t anchors_per_step = 1;
  double lr = 1e-4;
  std::size_t warmup_steps = 0;
  std::string lr_schedule = "constant";
  std::size_t steps = 1000;
  std::size_t checkpoint_every = 100;
  std::size_t threads = 1;

  // Paths
  std::string corpus_dir = "corpus";
  std::string out_dir = "run";
  std::string resume_from;

  // Tooling
  double gradcheck_eps = 1e-4;
  std::size_t verify_samples = 1000000;

  // Throws ConfigError on any out-of-range value.
  void validate() const;

  ModelConfig model() const;
  NoiseSchedule schedule() const;
  diffusion::LossWeights loss_weights() const;
};

// Strict JSON parsing: unknown keys and wrong value types are ConfigErrors.
RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

// Applies FSACDM_<KEY> environment variables (key upper-cased). Values are
// parsed as JSON, falling back to a plain string. Unknown FSACDM_ names are
// ConfigErrors.
void apply_env_overrides(RunConfig& cfg, char** envp);

}  // namespace markdiff
