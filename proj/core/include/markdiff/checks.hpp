// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "markdiff/gradcheck.hpp"

namespace markdiff {

struct GradCase {
  std::string name;
  double threshold = 1e-4;
  GradReport report;

  bool pass() const { return report.finite && report.max_rel_err <= threshold; }
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kDeepGradTolerance = 1e-3;

// Every registered loss on randomized small shapes: alignment loss,
// contrastive loss, encoder stack, CCAM block, full objective with T = 1 on a
// 4x8 image, and the U-Net on an 8x16 image.
std::vector<GradCase> gradcheck_suite(std::uint64_t seed, double eps);

}  // namespace markdiff
