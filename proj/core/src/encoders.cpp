// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/encoders.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace markdiff::encoders {

using ad::Var;

void init_params(ParamSet& params, const EncoderConfig& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.d_model;
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("d_model must be even and at least 2");
  const std::size_t vocab = markup::vocabulary().size();
  auto add = [&](const std::string& name, Shape shape, double stddev) {
    params.add(name, init_normal(shape, stddev, seed, name));
  };
  add("enc.tok_emb", {vocab, d}, 0.5);
  add("enc.pos_emb", {cfg.max_tokens, d}, 0.5);

  std::size_t cin = 1;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::size_t cout = cfg.conv_channels[i];
    const std::string base = "enc.conv" + std::to_string(i);
    add(base + ".w", {cout, cin, 3, 3}, std::sqrt(1.0 / (9.0 * static_cast<double>(cin))));
    params.add(base + ".b", DenseArray({cout}, 0.0));
    cin = cout;
  }
  if (cfg.conv_channels[3] != cfg.conv_channels[2])
    throw std::invalid_argument("the last two encoder conv layers must have equal widths");

  add("enc.seq.w", {d, cin, 1, 1}, std::sqrt(1.0 / static_cast<double>(cin)));
  params.add("enc.seq.b", DenseArray({d}, 0.0));

  const std::size_t hidden = d / 2;
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string base = std::string("enc.lstm.") + dir;
    add(base + ".wx", {d, 4 * hidden}, std::sqrt(1.0 / static_cast<double>(d)));
    add(base + ".wh", {hidden, 4 * hidden}, std::sqrt(1.0 / static_cast<double>(hidden)));
    params.add(base + ".b", DenseArray({4 * hidden}, 0.0));
  }
  for (const char* w : {"wq", "wk", "wv"})
    add(std::string("enc.cam.") + w, {d, d}, std::sqrt(1.0 / static_cast<double>(d)));
}

Var encode_markup(const Bindings& p, const EncoderConfig& cfg, const markup::TokenSeq& tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_markup: empty token sequence");
  if (tokens.size() > cfg.max_tokens)
    throw std::invalid_argument("encode_markup: " + std::to_string(tokens.size()) + " tokens exceeds " +
                                std::to_string(cfg.max_tokens));
  std::vector<std::size_t> ids, positions;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ids.push_back(markup::token_index(tokens[i]));
    positions.push_back(i);
  }
  return ad::add(ad::gather_rows(p["enc.tok_emb"], ids), ad::gather_rows(p["enc.pos_emb"], positions));
}

Var encode_image(const Bindings& p, const EncoderConfig& cfg, const Var& image) {
  const Shape expected{cfg.image_height, cfg.image_width};
  const Shape expected3{1, cfg.image_height, cfg.image_width};
  if (image.shape() != expected && image.shape() != expected3)
    throw std::invalid_argument("encode_image: expected image of shape " + shape_string(expected) + ", got " +
                                shape_string(image.shape()));
  Var x = ad::reshape(image, expected3);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string base = "enc.conv" + std::to_string(i);
    const Var bias = p[base + ".b"];
    x = ad::silu(ad::conv2d(x, p[base + ".w"], &bias, 2, 1));
  }
  const Var bias = p["enc.conv3.b"];
  return ad::add(x, ad::silu(ad::conv2d(x, p["enc.conv3.w"], &bias, 1, 1)));
}

Var map_to_sequence(const Bindings& p, const Var& features) {
  if (features.value().rank() != 3) throw std::invalid_argument("map_to_sequence: expected (C, H, W) features");
  const Var bias = p["enc.seq.b"];
  const Var projected = ad::conv2d(features, p["enc.seq.w"], &bias, 1, 0);
  return ad::transpose(ad::pool_height(projected));
}

namespace {

// One LSTM direction over rows of `xw` (precomputed input projections).
std::vector<Var> lstm_pass(const Var& xw, const Var& wh, std::size_t hidden, bool reverse) {
  const std::size_t steps = xw.shape()[0];
  ad::Graph& g = xw.graph();
  Var h = g.constant(DenseArray({1, hidden}, 0.0));
  Var c = g.constant(DenseArray({1, hidden}, 0.0));
  std::vector<Var> states(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t m = reverse ? steps - 1 - k : k;
    const Var gates = ad::add(ad::slice0(xw, m, m + 1), ad::matmul(h, wh));
    const Var in = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
    const Var forget = ad::sigmoid(ad::slice_cols(gates, hidden, 2 * hidden));
    const Var out = ad::sigmoid(ad::slice_cols(gates, 2 * hidden, 3 * hidden));
    const Var cand = ad::tanh(ad::slice_cols(gates, 3 * hidden, 4 * hidden));
    c = ad::add(ad::mul(forget, c), ad::mul(in, cand));
    h = ad::mul(out, ad::tanh(c));
    states[m] = h;
  }
  return states;
}

}  // namespace

Var bidir_context(const Bindings& p, const Var& sequence) {
  if (sequence.value().rank() != 2) throw std::invalid_argument("bidir_context: expected (M, D) sequence");
  const std::size_t d = sequence.shape()[1];
  const std::size_t hidden = d / 2;
  std::vector<Var> fwd, bwd;
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string base = std::string("enc.lstm.") + dir;
    if (p[base + ".wx"].shape()[0] != d) throw std::invalid_argument("bidir_context: width mismatch");
    const Var xw = ad::add_bias(ad::matmul(sequence, p[base + ".wx"]), p[base + ".b"]);
    (dir[0] == 'f' ? fwd : bwd) = lstm_pass(xw, p[base + ".wh"], hidden, dir[0] == 'b');
  }
  const Var f = ad::concat0(fwd);
  const Var b = ad::concat0(bwd);
  const std::vector<Var> halves{f, b};
  return ad::concat_cols(halves);
}

CamOutput cam(const Bindings& p, const Var& markup, const Var& context) {
  const Var q = ad::matmul(markup, p["enc.cam.wq"]);
  const Var k = ad::matmul(context, p["enc.cam.wk"]);
  const Var v = ad::matmul(context, p["enc.cam.wv"]);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(k.shape()[1]));
  const Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_dk));
  return {ad::matmul(weights, v), weights};
}

Var fa_loss(const Var& aligned, const Var& markup) {
  if (aligned.shape() != markup.shape() || aligned.value().rank() != 2)
    throw std::invalid_argument("fa_loss: c and t must share an (N, D) shape");
  const std::size_t n = aligned.shape()[0], d = aligned.shape()[1];
  const auto& c = aligned.value();
  const auto& t = markup.value();

  std::vector<double> cn(n), tn(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sc = 0.0, st = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      sc += c[i * d + k] * c[i * d + k];
      st += t[i * d + k] * t[i * d + k];
    }
    cn[i] = std::sqrt(sc);
    tn[i] = std::sqrt(st);
    if (cn[i] < 1e-12 || tn[i] < 1e-12)
      throw std::invalid_argument("fa_loss: zero-norm row " + std::to_string(i) + " (cosine undefined)");
  }
  // Weight of cos(c_i, t_j) in the loss.
  const double inv_n = 1.0 / static_cast<double>(n);
  const double off = n > 1 ? inv_n / static_cast<double>(n - 1) : 0.0;
  auto weight = [inv_n, off](std::size_t i, std::size_t j) { return i == j ? -inv_n : off; };

  DenseArray cosines({n, n});
  double loss = 1.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double dotp = 0.0;
      for (std::size_t k = 0; k < d; ++k) dotp += c[i * d + k] * t[j * d + k];
      cosines.at(i, j) = dotp / (cn[i] * tn[j]);
      loss += weight(i, j) * cosines.at(i, j);
    }

  return aligned.graph().apply(
      DenseArray::scalar(loss), {aligned, markup},
      [n, d, cn, tn, cosines, weight](ad::BackwardContext& ctx) {
        const double g = ctx.grad_out()[0];
        const auto& c = ctx.input(0);
        const auto& t = ctx.input(1);
        const bool need_c = ctx.needs(0), need_t = ctx.needs(1);
        DenseArray* gc = need_c ? &ctx.grad_in(0) : nullptr;
        DenseArray* gt = need_t ? &ctx.grad_in(1) : nullptr;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double w = g * weight(i, j);
            if (w == 0.0) continue;
            const double cos = cosines.at(i, j);
            const double inv = 1.0 / (cn[i] * tn[j]);
            for (std::size_t k = 0; k < d; ++k) {
              if (gc) (*gc)[i * d + k] += w * (t[j * d + k] * inv - cos * c[i * d + k] / (cn[i] * cn[i]));
              if (gt) (*gt)[j * d + k] += w * (c[i * d + k] * inv - cos * t[j * d + k] / (tn[j] * tn[j]));
            }
          }
      });
}

}  // namespace markdiff::encoders
