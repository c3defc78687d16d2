// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "markdiff/dense_array.hpp"

namespace markdiff {

// Row-wise softmax of a rank-2 array (max-subtracted). Throws on non-finite input.
DenseArray softmax_rows(const DenseArray& m);

// KL(N(mu_q, var_q) || N(mu_p, var_p)), summed over elements. Arrays must share
// a shape; variances must be strictly positive.
double gaussian_kl(const DenseArray& mu_q, const DenseArray& var_q, const DenseArray& mu_p,
                   const DenseArray& var_p);
double gaussian_kl(double mu_q, double var_q, double mu_p, double var_p);

double normal_logpdf(double x, double mean, double var);
double log_sum_exp(std::span<const double> xs);

}  // namespace markdiff
