// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "markdiff/autodiff.hpp"
#include "markdiff/image.hpp"
#include "markdiff/markup.hpp"
#include "markdiff/params.hpp"
#include "markdiff/rng.hpp"
#include "markdiff/schedule.hpp"
#include "markdiff/unet.hpp"

namespace markdiff::diffusion {

// Pixels in [0, 1] <-> diffusion space [-1, 1].
DenseArray to_model_space(const Image& img);
Image from_model_space(const DenseArray& y);

// sqrt(abar_t) y0 + sqrt(1 - abar_t) eps, t in [0, T].
DenseArray forward_sample(const NoiseSchedule& schedule, const DenseArray& y0, std::size_t t,
                          const DenseArray& eps);

// Noise predictor: (y_t, t) -> eps_hat, built in y_t's graph.
using EpsModel = std::function<ad::Var(const ad::Var& y_t, std::size_t t)>;

// Mean of p(y_{t-1} | y_t) from a noise prediction.
ad::Var model_mean(const NoiseSchedule& schedule, const ad::Var& y_t, const ad::Var& eps_hat, std::size_t t);

// Per-step ELBO contribution with y_t = forward_sample(y0, t, eps):
// t = 1: log N(y0; mu_theta, beta_1); t >= 2: -||mu_tilde - mu_theta||^2 / (2 beta_tilde_t).
ad::Var elbo_term(ad::Graph& graph, const NoiseSchedule& schedule, const EpsModel& model, const DenseArray& y0,
                  std::size_t t, const DenseArray& eps);

// KL(q(y_T | y0) || N(0, I)).
double prior_kl(const NoiseSchedule& schedule, const DenseArray& y0);

// Single-step estimator T * elbo_term(t) - prior_kl, unbiased for t ~ U{1..T}.
ad::Var elbo(ad::Graph& graph, const NoiseSchedule& schedule, const EpsModel& model, const DenseArray& y0,
             std::size_t t, const DenseArray& eps);

// Sum of every step's term, each with a fresh eps, minus prior_kl.
double elbo_exhaustive(const NoiseSchedule& schedule, const EpsModel& model, const DenseArray& y0, RngStream& rng);

DenseArray standard_normal(const Shape& shape, RngStream& rng);
std::size_t sample_step(const NoiseSchedule& schedule, RngStream& rng);

// ---------------------------------------------------------------------------
// Positive and negative construction

struct Augmentation {
  int dx = 0;
  int dy = 0;
  bool blur = false;
};

inline constexpr int kMaxShift = 2;
inline constexpr double kMinInkRetention = 0.95;
inline constexpr int kMaxAugmentAttempts = 8;

// Zero-padded integer translation, then an optional 3x3 box blur.
Image apply_augmentation(const Image& img, const Augmentation& aug);
// Draws augmentations until the ink-retention bound holds; identity after
// kMaxAugmentAttempts failures.
Image make_positive(const Image& y0, RngStream& rng, Augmentation* used = nullptr);

// K distinct batch positions other than `anchor`.
std::vector<std::size_t> sample_negatives(std::size_t batch_size, std::size_t anchor, std::size_t k,
                                          RngStream& rng);

// ---------------------------------------------------------------------------
// Objective

enum class ClDenominator { WithPositive, NegativesOnly };

struct LossWeights {
  double lambda = 0.005;
  double beta_fa = 0.02;
  double tau = 0.5;
  std::size_t num_negatives = 5;
  double exp_clamp = 10.0;
  ClDenominator cl_denominator = ClDenominator::WithPositive;
};

void validate(const LossWeights& w);

// log of the positive's share of the temperature-scaled similarity mass.
// Inputs are unit vectors; an empty negative set gives 0.
ad::Var contrastive_loss(const ad::Var& z_anchor, const ad::Var& z_pos, std::span<const ad::Var> z_negs, double tau,
                         ClDenominator denominator = ClDenominator::WithPositive);

struct LossBundle {
  double l_fa = 0.0;
  double elbo_anchor = 0.0;
  double elbo_pos = 0.0;
  double eubo_neg_term = 0.0;
  double l_cl = 0.0;
  double total = 0.0;
};

struct LossVars {
  ad::Var l_fa, elbo_anchor, elbo_pos, eubo_neg_term, l_cl, total;
  LossBundle values() const;
};

// One anchor with its positive and negatives. Images are pixel-space (H, W)
// arrays in [0, 1]; all diffusion terms share `step` and `eps`.
struct LossInputs {
  markup::TokenSeq tokens;
  DenseArray anchor;
  DenseArray positive;
  std::vector<DenseArray> negatives;
  std::size_t step = 1;
  DenseArray eps;
};

// Builds every term in p's graph. Throws NumericError when a term is not finite.
LossVars total_loss(const Bindings& p, const ModelConfig& cfg, const NoiseSchedule& schedule,
                    const LossWeights& weights, const LossInputs& in);

// ---------------------------------------------------------------------------
// Sampling

// Ancestral sampling from y_T ~ N(0, I); returns the final y_0 in model space.
DenseArray ddpm_sample_raw(const NoiseSchedule& schedule, const EpsModel& model, const Shape& shape,
                           RngStream& rng);
// Conditioned on `tokens`, mapped to pixel space and clipped to [0, 1].
Image ddpm_sample(const ParamSet& params, const ModelConfig& cfg, const NoiseSchedule& schedule,
                  const markup::TokenSeq& tokens, RngStream& rng);

}  // namespace markdiff::diffusion
