// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

namespace markdiff {

// Linear variance schedule. Tables are indexed by t in [0, T]; entry 0 holds
// the conventions beta_0 = 0, alpha_bar_0 = 1.
class NoiseSchedule {
 public:
  NoiseSchedule(std::size_t steps, double beta_start, double beta_end);

  std::size_t steps() const noexcept { return steps_; }
  double beta(std::size_t t) const { return beta_.at(t); }
  double alpha(std::size_t t) const { return 1.0 - beta_.at(t); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
  // Variance of q(y_{t-1} | y_t, y_0); defined for t >= 2, beta_1 at t = 1.
  double posterior_variance(std::size_t t) const;
  // Posterior mean = coef_y0 * y_0 + coef_yt * y_t, t >= 1.
  double posterior_coef_y0(std::size_t t) const;
  double posterior_coef_yt(std::size_t t) const;

 private:
  void check(std::size_t t) const;

  std::size_t steps_;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

}  // namespace markdiff
