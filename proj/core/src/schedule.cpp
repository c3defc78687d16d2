// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "markdiff/errors.hpp"

namespace markdiff {

NoiseSchedule::NoiseSchedule(std::size_t steps, double beta_start, double beta_end) : steps_(steps) {
  if (steps == 0) throw ConfigError("diffusion steps T must be at least 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) || (steps > 1 && beta_start == beta_end))
    throw ConfigError("beta schedule needs 0 < beta_start < beta_end < 1, got " + std::to_string(beta_start) +
                      ", " + std::to_string(beta_end));
  beta_.assign(steps + 1, 0.0);
  alpha_bar_.assign(steps + 1, 1.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    beta_[t] = beta_start + (beta_end - beta_start) * frac;
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
  }
}

void NoiseSchedule::check(std::size_t t) const {
  if (t < 1 || t > steps_)
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
}

double NoiseSchedule::posterior_variance(std::size_t t) const {
  check(t);
  if (t == 1) return beta_[1];
  return beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
}

double NoiseSchedule::posterior_coef_y0(std::size_t t) const {
  check(t);
  return std::sqrt(alpha_bar_[t - 1]) * beta_[t] / (1.0 - alpha_bar_[t]);
}

double NoiseSchedule::posterior_coef_yt(std::size_t t) const {
  check(t);
  return std::sqrt(alpha(t)) * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
}

}  // namespace markdiff
