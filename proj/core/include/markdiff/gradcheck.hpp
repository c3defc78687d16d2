// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "markdiff/autodiff.hpp"

namespace markdiff {

struct GradReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // False when the loss was non-finite at the base point or a perturbed point.
  bool finite = true;
  std::string diagnostic;
};

// Builds a scalar loss inside `graph` from a parameter vector leaf.
using ScalarLoss = std::function<ad::Var(ad::Graph& graph, const ad::Var& params)>;

// Compares the reverse-mode gradient of `loss` at `params` with central
// differences. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. With max_coords > 0 only that many coordinates, drawn
// deterministically from `seed`, are checked.
GradReport grad_check(const ScalarLoss& loss, const DenseArray& params, double eps,
                      std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace markdiff
