// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "markdiff/rng.hpp"

namespace markdiff {
namespace {

double evaluate(const ScalarLoss& loss, const DenseArray& params) {
  ad::Graph graph(false);
  const ad::Var p = graph.variable(params);
  const ad::Var out = loss(graph, p);
  if (out.size() != 1) throw std::invalid_argument("grad_check: loss must be a scalar");
  return out.value()[0];
}

}  // namespace

GradReport grad_check(const ScalarLoss& loss, const DenseArray& params, double eps, std::size_t max_coords,
                      std::uint64_t seed) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
  GradReport report;

  ad::Graph graph;
  const ad::Var p = graph.variable(params);
  const ad::Var out = loss(graph, p);
  if (out.size() != 1) throw std::invalid_argument("grad_check: loss must be a scalar");
  if (!std::isfinite(out.value()[0])) {
    report.finite = false;
    report.max_rel_err = INFINITY;
    report.diagnostic = "non-finite loss at the base point";
    return report;
  }
  graph.backward(out);
  const DenseArray analytic = graph.grad(p);

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords > 0 && max_coords < coords.size()) {
    RngStream rng(seed, "grad_check.coords");
    for (std::size_t i = 0; i < max_coords; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }

  DenseArray probe = params;
  for (std::size_t i : coords) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = evaluate(loss, probe);
    probe[i] = saved - eps;
    const double down = evaluate(loss, probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.finite = false;
      report.max_rel_err = INFINITY;
      report.worst_index = i;
      report.diagnostic = "non-finite loss at perturbed coordinate " + std::to_string(i);
      return report;
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    ++report.checked;
    if (report.checked == 1 || rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace markdiff
