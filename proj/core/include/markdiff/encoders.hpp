// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "markdiff/autodiff.hpp"
#include "markdiff/markup.hpp"
#include "markdiff/params.hpp"

namespace markdiff::encoders {

struct EncoderConfig {
  std::size_t image_height = markup::kImageHeight;
  std::size_t image_width = markup::kImageWidth;
  std::size_t d_model = 64;
  std::size_t max_tokens = markup::kMaxTokens;
  // Output channels of the four conv layers; the first three have stride 2.
  std::array<std::size_t, 4> conv_channels{16, 32, 64, 64};

  std::size_t feature_height() const { return (image_height + 7) / 8; }
  std::size_t feature_width() const { return (image_width + 7) / 8; }
};

// Adds every "enc.*" parameter.
void init_params(ParamSet& params, const EncoderConfig& cfg, std::uint64_t seed);

// (N, D): token embedding plus learned positional embedding per row.
ad::Var encode_markup(const Bindings& p, const EncoderConfig& cfg, const markup::TokenSeq& tokens);

// (H, W) image -> (C, H/8, W/8) feature map. Four 3x3 conv layers with SiLU;
// the last one is stride 1 with an identity shortcut.
ad::Var encode_image(const Bindings& p, const EncoderConfig& cfg, const ad::Var& image);

// (C, H', W') -> (W', D): 1x1 conv to D channels, then mean over H'.
ad::Var map_to_sequence(const Bindings& p, const ad::Var& features);

// (M, D) -> (M, D): forward and backward LSTMs with D/2 hidden units each,
// states concatenated per position as [forward, backward].
ad::Var bidir_context(const Bindings& p, const ad::Var& sequence);

struct CamOutput {
  ad::Var aligned;  // (N, D)
  ad::Var weights;  // (N, M), rows sum to one
};

// Single-head cross attention with markup queries and visual keys/values.
CamOutput cam(const Bindings& p, const ad::Var& markup, const ad::Var& context);

// Fine-grained alignment loss over per-index cosine similarities. For N = 1
// the cross term is zero. Throws on rows with norm < 1e-12.
ad::Var fa_loss(const ad::Var& aligned, const ad::Var& markup);

}  // namespace markdiff::encoders
