// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/probability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace markdiff {

DenseArray softmax_rows(const DenseArray& m) {
  if (m.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank 2, got " + shape_string(m.shape()));
  if (!m.all_finite()) throw std::invalid_argument("softmax_rows: non-finite input");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  DenseArray out(m.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = m.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, m.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (out.at(r, c) = std::exp(m.at(r, c) - mx));
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= s;
  }
  return out;
}

double gaussian_kl(double mu_q, double var_q, double mu_p, double var_p) {
  if (!(var_q > 0.0) || !(var_p > 0.0)) throw std::invalid_argument("gaussian_kl: variances must be positive");
  const double d = mu_p - mu_q;
  return 0.5 * (var_q / var_p + d * d / var_p - 1.0 + std::log(var_p / var_q));
}

double gaussian_kl(const DenseArray& mu_q, const DenseArray& var_q, const DenseArray& mu_p,
                   const DenseArray& var_p) {
  if (mu_q.shape() != var_q.shape() || mu_q.shape() != mu_p.shape() || mu_q.shape() != var_p.shape())
    throw std::invalid_argument("gaussian_kl: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < mu_q.size(); ++i) total += gaussian_kl(mu_q[i], var_q[i], mu_p[i], var_p[i]);
  return total;
}

double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace markdiff
