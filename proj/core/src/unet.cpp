// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/unet.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "markdiff/ccam.hpp"
#include "markdiff/errors.hpp"

namespace markdiff {

using ad::Var;

namespace {

constexpr const char* kConvNames[] = {"unet.in", "unet.down1", "unet.down2", "unet.mid", "unet.up1", "unet.up2"};

void add_conv(ParamSet& params, const std::string& name, std::size_t cout, std::size_t cin, std::uint64_t seed,
              double gain = 1.0) {
  params.add(name + ".w", init_normal({cout, cin, 3, 3}, gain * std::sqrt(2.0 / (9.0 * static_cast<double>(cin))),
                                      seed, name + ".w"));
  params.add(name + ".b", DenseArray({cout}, 0.0));
}

Var conv(const Bindings& p, const std::string& name, const Var& x, std::size_t stride) {
  const Var bias = p[name + ".b"];
  return ad::conv2d(x, p[name + ".w"], &bias, stride, 1);
}

// (1, time_dim) embedding -> per-channel bias for one level.
Var time_bias(const Bindings& p, const std::string& conv_name, const Var& temb) {
  return ad::reshape(ad::add_bias(ad::matmul(temb, p[conv_name + ".t.w"]), p[conv_name + ".t.b"]),
                     {p[conv_name + ".b"].size()});
}

Var level(const Bindings& p, const std::string& name, const Var& x, const Var& temb, std::size_t stride) {
  return ad::silu(ad::add_channel(conv(p, name, x, stride), time_bias(p, name, temb)));
}

// (C, H, W) <-> (HW, C) for attention over positions.
Var to_tokens(const Var& x) {
  const Shape& s = x.shape();
  return ad::transpose(ad::reshape(x, {s[0], s[1] * s[2]}));
}
Var from_tokens(const Var& tokens, const Shape& shape) { return ad::reshape(ad::transpose(tokens), shape); }

}  // namespace

void validate(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& u = cfg.unet;
  if (e.image_height % 4 != 0 || e.image_width % 4 != 0 || e.image_height == 0 || e.image_width == 0)
    throw ConfigError("image height and width must be positive multiples of 4");
  if (e.d_model < 2 || e.d_model % 2 != 0) throw ConfigError("d_model must be even and at least 2");
  if (e.max_tokens == 0) throw ConfigError("max_tokens must be positive");
  for (auto c : u.channels)
    if (c == 0) throw ConfigError("U-Net channels must be positive");
  for (auto c : e.conv_channels)
    if (c == 0) throw ConfigError("encoder channels must be positive");
  if (e.conv_channels[2] != e.conv_channels[3]) throw ConfigError("last two encoder conv widths must match");
  if (u.attn_dim == 0) throw ConfigError("attn_dim must be positive");
  if (u.time_dim < 2 || u.time_dim % 2 != 0) throw ConfigError("time_dim must be even and at least 2");
}

void init_unet(ParamSet& params, const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const auto& u = cfg.unet;
  const std::size_t c1 = u.channels[0], c2 = u.channels[1], c3 = u.channels[2];
  const std::size_t td = u.time_dim;
  const double time_scale = 1.0 / std::sqrt(static_cast<double>(td));

  params.add("unet.time.w1", init_normal({td, td}, time_scale, seed, "unet.time.w1"));
  params.add("unet.time.b1", DenseArray({td}, 0.0));
  params.add("unet.time.w2", init_normal({td, td}, time_scale, seed, "unet.time.w2"));
  params.add("unet.time.b2", DenseArray({td}, 0.0));

  const std::size_t cin[] = {1, c1, c2, c3, c3 + c2, c2 + c1};
  const std::size_t cout[] = {c1, c2, c3, c3, c2, c1};
  for (std::size_t i = 0; i < 6; ++i) {
    const std::string name = kConvNames[i];
    add_conv(params, name, cout[i], cin[i], seed);
    params.add(name + ".t.w", init_normal({td, cout[i]}, time_scale, seed, name + ".t.w"));
    params.add(name + ".t.b", DenseArray({cout[i]}, 0.0));
  }
  add_conv(params, "unet.out", 1, c1, seed, 0.1);

  for (std::size_t i = 0; i < u.ccam_blocks; ++i)
    ccam::init_ccam_block(params, "unet.ccam" + std::to_string(i), {c3, cfg.encoder.d_model, u.attn_dim}, seed);
  for (std::size_t i = 0; i < u.crossattn_blocks; ++i) {
    const std::size_t c = i % 2 == 0 ? c2 : c1;
    ccam::init_cross_attention(params, "unet.xattn" + std::to_string(i), {c, cfg.encoder.d_model, u.attn_dim},
                               seed);
  }
}

ParamSet init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ParamSet params;
  encoders::init_params(params, cfg.encoder, seed);
  init_unet(params, cfg, seed);
  return params;
}

DenseArray timestep_embedding(std::size_t step, std::size_t dim) {
  DenseArray out({1, dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(step) * freq;
    out[i] = std::sin(arg);
    out[half + i] = std::cos(arg);
  }
  return out;
}

Var unet_eps(const Bindings& p, const ModelConfig& cfg, const NoiseSchedule& schedule, const Var& y_t,
             std::size_t step, const Var& markup) {
  const std::size_t h = cfg.image_height(), w = cfg.image_width();
  if (y_t.size() != h * w)
    throw std::invalid_argument("unet_eps: expected " + std::to_string(h) + "x" + std::to_string(w) + " input, got " +
                                shape_string(y_t.shape()));
  if (step < 1 || step > schedule.steps())
    throw std::invalid_argument("unet_eps: step " + std::to_string(step) + " outside [1, " +
                                std::to_string(schedule.steps()) + "]");
  ad::Graph& g = y_t.graph();
  const auto& u = cfg.unet;

  const Var t0 = g.constant(timestep_embedding(step, u.time_dim));
  const Var t1 = ad::silu(ad::add_bias(ad::matmul(t0, p["unet.time.w1"]), p["unet.time.b1"]));
  const Var temb = ad::add_bias(ad::matmul(t1, p["unet.time.w2"]), p["unet.time.b2"]);

  const Var x = ad::reshape(y_t, {1, h, w});
  const Var e1 = level(p, "unet.in", x, temb, 1);
  const Var e2 = level(p, "unet.down1", e1, temb, 2);
  Var mid = level(p, "unet.down2", e2, temb, 2);

  const Shape mid_shape = mid.shape();
  Var tokens = to_tokens(mid);
  for (std::size_t i = 0; i < u.ccam_blocks; ++i)
    tokens = ccam::ccam_block(p, "unet.ccam" + std::to_string(i), tokens, markup);
  mid = ad::add(mid, level(p, "unet.mid", from_tokens(tokens, mid_shape), temb, 1));

  const std::vector<Var> cat2{ad::upsample2x(mid), e2};
  Var d2 = level(p, "unet.up1", ad::concat0(cat2), temb, 1);
  const Shape d2_shape = d2.shape();
  if (u.crossattn_blocks > 0) {
    Var tok = to_tokens(d2);
    for (std::size_t i = 0; i < u.crossattn_blocks; i += 2)
      tok = ccam::cross_attention(p, "unet.xattn" + std::to_string(i), tok, markup);
    d2 = from_tokens(tok, d2_shape);
  }

  const std::vector<Var> cat1{ad::upsample2x(d2), e1};
  Var d1 = level(p, "unet.up2", ad::concat0(cat1), temb, 1);
  const Shape d1_shape = d1.shape();
  if (u.crossattn_blocks > 1) {
    Var tok = to_tokens(d1);
    for (std::size_t i = 1; i < u.crossattn_blocks; i += 2)
      tok = ccam::cross_attention(p, "unet.xattn" + std::to_string(i), tok, markup);
    d1 = from_tokens(tok, d1_shape);
  }

  const Var y0_hat = ad::reshape(ad::tanh(conv(p, "unet.out", d1, 1)), y_t.shape());
  const double noise_sd = std::sqrt(1.0 - schedule.alpha_bar(step));
  return ad::scale(ad::sub(y_t, ad::scale(y0_hat, std::sqrt(schedule.alpha_bar(step)))), 1.0 / noise_sd);
}

}  // namespace markdiff
