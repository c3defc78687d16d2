// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "markdiff/rng.hpp"

namespace markdiff::bounds {

// Scalar linear-Gaussian diffusion chain.
//   forward  q(y_t | y_{t-1}) = N(sqrt(1 - beta_t) y_{t-1}, beta_t)
//   reverse  p(y_T) = N(prior_mean, prior_var),
//            p(y_{t-1} | y_t) = N(rev_a[t-1] y_t + rev_b[t-1], rev_var[t-1])
struct GaussianChain {
  std::vector<double> beta;
  double prior_mean = 0.0;
  double prior_var = 1.0;
  std::vector<double> rev_a;
  std::vector<double> rev_b;
  std::vector<double> rev_var;

  std::size_t steps() const noexcept { return beta.size(); }
  void validate() const;

  // Reverse chain equal to the exact reversal of q started from data
  // N(mu_star, var_star); its marginal on y_0 is that data distribution.
  static GaussianChain true_reversal(std::vector<double> beta, double mu_star, double var_star);
  // Adds `delta` to every reverse mean offset.
  GaussianChain with_mean_shift(double delta) const;
  // Multiplies every reverse variance by `factor`.
  GaussianChain with_variance_scale(double factor) const;
  // Multiplies every reverse slope by `factor`.
  GaussianChain with_slope_scale(double factor) const;
};

struct Gaussian1 {
  double mean = 0.0;
  double var = 1.0;
};

// Marginal of y_0 under the reverse chain.
Gaussian1 marginal(const GaussianChain& chain);
// Marginal of y_t given y_0 under the forward chain.
Gaussian1 forward_marginal(const GaussianChain& chain, double y0, std::size_t t);

double exact_loglik(const GaussianChain& chain, double y0);

// Reconstruction + interior KLs + prior KL, each in closed form.
double elbo_exact(const GaussianChain& chain, double y0);

// log p(y_0, y_{1:T}) - log q(y_{1:T} | y_0) for one latent path y[0..T-1] = y_1..y_T.
double log_weight(const GaussianChain& chain, double y0, const std::vector<double>& path);

struct BoundEstimates {
  double exact_logp = 0.0;
  double elbo = 0.0;
  double cubo = 0.0;
  double cubo_stderr = 0.0;
  std::size_t n_samples = 0;
};

inline constexpr std::size_t kMinCuboSamples = 10000;

// cubo = 0.5 log mean(w^2) over n forward paths, evaluated in log space;
// stderr from the delta method on the second moment.
BoundEstimates cubo_estimate(const GaussianChain& chain, double y0, std::size_t n, std::uint64_t seed);

struct PositiveDecomposition {
  double elbo_anchor = 0.0;
  double elbo_pos = 0.0;
  double mi = 0.0;
  double mi_stderr = 0.0;
  double joint = 0.0;  // elbo_anchor + elbo_pos + mi
};

// Runs the forward chains of y0 and y0p with per-step noises of correlation
// rho and estimates MI(y_T, y_T') by the Gaussian plug-in -0.5 log(1 - r^2),
// r the sample correlation of the standardized residuals.
PositiveDecomposition joint_positive_decomposition(const GaussianChain& chain, double y0, double y0p, double rho,
                                                   std::size_t n, std::uint64_t seed);

double gaussian_mi(double rho);

struct ChainCase {
  std::string name;
  GaussianChain chain;
  double y0 = 0.0;
  bool matched = false;  // reverse chain equals the true reversal
};

// Fixed configurations used by the verification report.
std::vector<ChainCase> reference_cases();

struct CaseReport {
  ChainCase config;
  BoundEstimates estimates;
  bool sandwich = false;  // elbo <= exact <= cubo + 3 stderr
  bool pass = false;      // sandwich, plus the equality checks for matched chains
};

struct VerifyReport {
  std::vector<CaseReport> cases;
  PositiveDecomposition independent;
  PositiveDecomposition correlated;
  double correlated_rho = 0.9;
  bool mi_pass = false;
  bool pass = false;
};

// Tolerance for analytic equality of elbo and exact log-likelihood.
inline constexpr double kExactTolerance = 1e-10;

VerifyReport verify_bounds(std::size_t n, std::uint64_t seed);
std::string format_report(const VerifyReport& report);

}  // namespace markdiff::bounds
