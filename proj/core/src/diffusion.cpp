// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "markdiff/encoders.hpp"
#include "markdiff/errors.hpp"
#include "markdiff/probability.hpp"

namespace markdiff::diffusion {

using ad::Var;

DenseArray to_model_space(const Image& img) {
  if (img.channels != 1) throw std::invalid_argument("to_model_space: expected a single-channel image");
  DenseArray y({img.height, img.width});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 2.0 * img.pixels[i] - 1.0;
  return y;
}

Image from_model_space(const DenseArray& y) {
  if (y.rank() != 2) throw std::invalid_argument("from_model_space: expected an (H, W) array");
  Image img(y.dim(0), y.dim(1));
  for (std::size_t i = 0; i < y.size(); ++i) img.pixels[i] = std::clamp(0.5 * (y[i] + 1.0), 0.0, 1.0);
  return img;
}

DenseArray forward_sample(const NoiseSchedule& schedule, const DenseArray& y0, std::size_t t, const DenseArray& eps) {
  if (t > schedule.steps())
    throw std::out_of_range("forward_sample: step " + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.steps()) + "]");
  if (y0.shape() != eps.shape()) throw std::invalid_argument("forward_sample: eps shape differs from y0");
  const double a = std::sqrt(schedule.alpha_bar(t));
  const double s = std::sqrt(1.0 - schedule.alpha_bar(t));
  DenseArray out(y0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * y0[i] + s * eps[i];
  return out;
}

Var model_mean(const NoiseSchedule& schedule, const Var& y_t, const Var& eps_hat, std::size_t t) {
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double eps_coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  DenseArray shift(y_t.value());
  for (double& v : shift.data()) v *= inv_sqrt_alpha;
  return ad::affine(eps_hat, -eps_coef * inv_sqrt_alpha, shift);
}

namespace {

// target - mu_theta as an affine function of eps_hat.
Var mean_gap(const NoiseSchedule& schedule, const DenseArray& target, const DenseArray& y_t, const Var& eps_hat,
             std::size_t t) {
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double eps_coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  DenseArray shift(target.shape());
  for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = target[i] - y_t[i] * inv_sqrt_alpha;
  return ad::affine(eps_hat, eps_coef * inv_sqrt_alpha, shift);
}

}  // namespace

Var elbo_term(ad::Graph& graph, const NoiseSchedule& schedule, const EpsModel& model, const DenseArray& y0,
              std::size_t t, const DenseArray& eps) {
  if (t < 1 || t > schedule.steps())
    throw std::out_of_range("elbo_term: step " + std::to_string(t) + " outside [1, T]");
  const DenseArray y_t = forward_sample(schedule, y0, t, eps);
  const Var eps_hat = model(graph.constant(y_t), t);
  if (eps_hat.shape() != y0.shape()) throw std::invalid_argument("elbo_term: model output shape differs from y0");

  if (t == 1) {
    const double var = schedule.beta(1);
    const Var gap = mean_gap(schedule, y0, y_t, eps_hat, 1);
    const double log_norm = -0.5 * static_cast<double>(y0.size()) * std::log(2.0 * std::numbers::pi * var);
    return ad::add_scalar(ad::scale(ad::sum_squares(gap), -0.5 / var), log_norm);
  }
  const double c0 = schedule.posterior_coef_y0(t), ct = schedule.posterior_coef_yt(t);
  DenseArray mu_tilde(y0.shape());
  for (std::size_t i = 0; i < y0.size(); ++i) mu_tilde[i] = c0 * y0[i] + ct * y_t[i];
  const Var gap = mean_gap(schedule, mu_tilde, y_t, eps_hat, t);
  return ad::scale(ad::sum_squares(gap), -0.5 / schedule.posterior_variance(t));
}

double prior_kl(const NoiseSchedule& schedule, const DenseArray& y0) {
  const std::size_t big_t = schedule.steps();
  const double a = std::sqrt(schedule.alpha_bar(big_t));
  const double var = 1.0 - schedule.alpha_bar(big_t);
  double kl = 0.0;
  for (double v : y0.data()) kl += gaussian_kl(a * v, var, 0.0, 1.0);
  return kl;
}

Var elbo(ad::Graph& graph, const NoiseSchedule& schedule, const EpsModel& model, const DenseArray& y0, std::size_t t,
         const DenseArray& eps) {
  const Var term = elbo_term(graph, schedule, model, y0, t, eps);
  return ad::add_scalar(ad::scale(term, static_cast<double>(schedule.steps())), -prior_kl(schedule, y0));
}

double elbo_exhaustive(const NoiseSchedule& schedule, const EpsModel& model, const DenseArray& y0, RngStream& rng) {
  double total = -prior_kl(schedule, y0);
  for (std::size_t t = 1; t <= schedule.steps(); ++t) {
    ad::Graph graph(false);
    total += elbo_term(graph, schedule, model, y0, t, standard_normal(y0.shape(), rng)).value().item();
  }
  return total;
}

DenseArray standard_normal(const Shape& shape, RngStream& rng) {
  DenseArray out(shape);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

std::size_t sample_step(const NoiseSchedule& schedule, RngStream& rng) {
  return 1 + static_cast<std::size_t>(rng.below(schedule.steps()));
}

// ---------------------------------------------------------------------------
// Positive and negative construction

Image apply_augmentation(const Image& img, const Augmentation& aug) {
  const auto h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  Image shifted(img.height, img.width, img.channels);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long sy = y - aug.dy, sx = x - aug.dx;
      if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < img.channels; ++c)
        shifted.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  if (!aug.blur) return shifted;
  Image blurred(img.height, img.width, img.channels);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        double s = 0.0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w)
              s += shifted.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
          }
        blurred.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = s / 9.0;
      }
  return blurred;
}

Image make_positive(const Image& y0, RngStream& rng, Augmentation* used) {
  const double original = y0.ink();
  for (int attempt = 0; attempt < kMaxAugmentAttempts; ++attempt) {
    Augmentation aug;
    aug.dx = rng.uniform_int(-kMaxShift, kMaxShift);
    aug.dy = rng.uniform_int(-kMaxShift, kMaxShift);
    aug.blur = rng.bernoulli(0.5);
    Image out = apply_augmentation(y0, aug);
    if (out.ink() >= kMinInkRetention * original) {
      if (used) *used = aug;
      return out;
    }
  }
  if (used) *used = Augmentation{};
  return y0;
}

std::vector<std::size_t> sample_negatives(std::size_t batch_size, std::size_t anchor, std::size_t k, RngStream& rng) {
  if (anchor >= batch_size) throw std::invalid_argument("sample_negatives: anchor outside the batch");
  if (batch_size <= k)
    throw std::invalid_argument("sample_negatives: batch of " + std::to_string(batch_size) + " cannot supply " +
                                std::to_string(k) + " negatives");
  std::vector<std::size_t> pool;
  pool.reserve(batch_size - 1);
  for (std::size_t i = 0; i < batch_size; ++i)
    if (i != anchor) pool.push_back(i);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

// ---------------------------------------------------------------------------
// Objective

void validate(const LossWeights& w) {
  if (!(w.lambda >= 0.0) || !std::isfinite(w.lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (!(w.beta_fa >= 0.0) || !std::isfinite(w.beta_fa)) throw ConfigError("beta_fa must be finite and >= 0");
  if (!(w.tau > 0.0) || !std::isfinite(w.tau)) throw ConfigError("tau must be finite and > 0");
  if (w.num_negatives < 1) throw ConfigError("num_negatives must be at least 1");
  if (!std::isfinite(w.exp_clamp)) throw ConfigError("exp_clamp must be finite");
}

Var contrastive_loss(const Var& z_anchor, const Var& z_pos, std::span<const Var> z_negs, double tau,
                     ClDenominator denominator) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  if (z_negs.empty()) return z_anchor.graph().constant(DenseArray::scalar(0.0));
  const Var pos = ad::scale(ad::dot(z_anchor, z_pos), 1.0 / tau);
  std::vector<Var> logits;
  if (denominator == ClDenominator::WithPositive) logits.push_back(pos);
  for (const auto& z : z_negs) logits.push_back(ad::scale(ad::dot(z_anchor, z), 1.0 / tau));
  return ad::sub(pos, ad::log_sum_exp(ad::concat0(logits)));
}

LossBundle LossVars::values() const {
  return {l_fa.value().item(),          elbo_anchor.value().item(), elbo_pos.value().item(),
          eubo_neg_term.value().item(), l_cl.value().item(),        total.value().item()};
}

namespace {

DenseArray pixels_to_model(const DenseArray& pixels) {
  DenseArray y(pixels.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 2.0 * pixels[i] - 1.0;
  return y;
}

void require_finite(const Var& v, const char* name) {
  const double x = v.value().item();
  if (!std::isfinite(x)) throw NumericError(std::string("total_loss: non-finite ") + name + " = " + std::to_string(x));
}

}  // namespace

LossVars total_loss(const Bindings& p, const ModelConfig& cfg, const NoiseSchedule& schedule,
                    const LossWeights& weights, const LossInputs& in) {
  ad::Graph& g = p.graph();
  const Shape image_shape{cfg.image_height(), cfg.image_width()};
  if (in.anchor.shape() != image_shape || in.positive.shape() != image_shape || in.eps.shape() != image_shape)
    throw std::invalid_argument("total_loss: anchor, positive and eps must be " + shape_string(image_shape));

  LossVars out;
  const Var markup = encoders::encode_markup(p, cfg.encoder, in.tokens);

  const Var features = encoders::encode_image(p, cfg.encoder, g.constant(in.anchor));
  const Var context = encoders::bidir_context(p, encoders::map_to_sequence(p, features));
  out.l_fa = encoders::fa_loss(encoders::cam(p, markup, context).aligned, markup);

  const EpsModel model = [&](const Var& y_t, std::size_t t) { return unet_eps(p, cfg, schedule, y_t, t, markup); };
  const DenseArray y0_anchor = pixels_to_model(in.anchor);
  const DenseArray y0_pos = pixels_to_model(in.positive);
  out.elbo_anchor = elbo(g, schedule, model, y0_anchor, in.step, in.eps);
  out.elbo_pos = elbo(g, schedule, model, y0_pos, in.step, in.eps);

  if (weights.lambda > 0.0 && !in.negatives.empty()) {
    std::vector<Var> exps, z_negs;
    for (const auto& neg : in.negatives) {
      if (neg.shape() != image_shape) throw std::invalid_argument("total_loss: negative has the wrong shape");
      const DenseArray y0_neg = pixels_to_model(neg);
      const Var e = elbo(g, schedule, model, y0_neg, in.step, in.eps);
      exps.push_back(ad::exp_clamped(ad::scale(e, 2.0), weights.exp_clamp));
      z_negs.push_back(ad::l2_normalize(g.constant(forward_sample(schedule, y0_neg, in.step, in.eps))));
    }
    out.eubo_neg_term = ad::mean(ad::concat0(exps));
    const Var z_anchor = ad::l2_normalize(g.constant(forward_sample(schedule, y0_anchor, in.step, in.eps)));
    const Var z_pos = ad::l2_normalize(g.constant(forward_sample(schedule, y0_pos, in.step, in.eps)));
    out.l_cl = contrastive_loss(z_anchor, z_pos, z_negs, weights.tau, weights.cl_denominator);
  } else {
    out.eubo_neg_term = g.constant(DenseArray::scalar(0.0));
    out.l_cl = g.constant(DenseArray::scalar(0.0));
  }

  const Var fa = ad::scale(out.l_fa, weights.beta_fa);
  const Var pos_part = ad::add(out.elbo_anchor, out.elbo_pos);
  const Var neg_part = ad::scale(out.eubo_neg_term, weights.lambda);
  out.total = ad::sub(ad::add(ad::sub(fa, pos_part), neg_part), out.l_cl);

  require_finite(out.l_fa, "l_fa");
  require_finite(out.elbo_anchor, "elbo_anchor");
  require_finite(out.elbo_pos, "elbo_pos");
  require_finite(out.eubo_neg_term, "eubo_neg_term");
  require_finite(out.l_cl, "l_cl");
  require_finite(out.total, "total");
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

DenseArray ddpm_sample_raw(const NoiseSchedule& schedule, const EpsModel& model, const Shape& shape, RngStream& rng) {
  DenseArray y = standard_normal(shape, rng);
  for (std::size_t t = schedule.steps(); t >= 1; --t) {
    ad::Graph graph(false);
    const Var y_t = graph.constant(y);
    const Var mean = model_mean(schedule, y_t, model(y_t, t), t);
    y = mean.value();
    if (t > 1) {
      const double sd = std::sqrt(schedule.posterior_variance(t));
      for (double& v : y.data()) v += sd * rng.normal();
    }
  }
  return y;
}

Image ddpm_sample(const ParamSet& params, const ModelConfig& cfg, const NoiseSchedule& schedule,
                  const markup::TokenSeq& tokens, RngStream& rng) {
  const EpsModel model = [&](const Var& y_t, std::size_t t) {
    const Bindings p = Bindings::leaves(y_t.graph(), params, false);
    return unet_eps(p, cfg, schedule, y_t, t, encoders::encode_markup(p, cfg.encoder, tokens));
  };
  return from_model_space(ddpm_sample_raw(schedule, model, {cfg.image_height(), cfg.image_width()}, rng));
}

}  // namespace markdiff::diffusion
