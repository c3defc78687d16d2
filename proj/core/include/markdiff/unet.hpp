// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "markdiff/autodiff.hpp"
#include "markdiff/encoders.hpp"
#include "markdiff/params.hpp"
#include "markdiff/schedule.hpp"

namespace markdiff {

struct UNetConfig {
  // Channels at full, half and quarter resolution.
  std::array<std::size_t, 3> channels{8, 16, 32};
  std::size_t attn_dim = 32;
  std::size_t time_dim = 32;
  std::size_t ccam_blocks = 2;
  std::size_t crossattn_blocks = 2;
};

// Encoders plus the noise estimator; everything the trainer owns.
struct ModelConfig {
  encoders::EncoderConfig encoder;
  UNetConfig unet;

  std::size_t image_height() const { return encoder.image_height; }
  std::size_t image_width() const { return encoder.image_width; }
};

void validate(const ModelConfig& cfg);

// Adds every "unet.*" parameter.
void init_unet(ParamSet& params, const ModelConfig& cfg, std::uint64_t seed);
// Encoder and U-Net parameters.
ParamSet init_model(const ModelConfig& cfg, std::uint64_t seed);

// Sinusoidal embedding of a diffusion step, (1, dim).
DenseArray timestep_embedding(std::size_t step, std::size_t dim);

// Noise prediction for y_t of shape (H, W) conditioned on markup (N, D).
// Three resolution levels with skips; CCAM blocks at the bottleneck and
// conventional cross attention on the decoder, alternating between the half
// and full resolution levels starting at half. The head estimates the clean
// image in [-1, 1] and returns (y_t - sqrt(abar_t) y0_hat) / sqrt(1 - abar_t).
ad::Var unet_eps(const Bindings& p, const ModelConfig& cfg, const NoiseSchedule& schedule, const ad::Var& y_t,
                 std::size_t step, const ad::Var& markup);

}  // namespace markdiff
