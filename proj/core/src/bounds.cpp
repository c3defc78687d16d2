// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "markdiff/errors.hpp"
#include "markdiff/probability.hpp"

namespace markdiff::bounds {
namespace {

double alpha_bar(const GaussianChain& c, std::size_t t) {
  double ab = 1.0;
  for (std::size_t s = 0; s < t; ++s) ab *= 1.0 - c.beta[s];
  return ab;
}

}  // namespace

void GaussianChain::validate() const {
  const std::size_t t = beta.size();
  if (t == 0) throw std::invalid_argument("GaussianChain: at least one step required");
  if (rev_a.size() != t || rev_b.size() != t || rev_var.size() != t)
    throw std::invalid_argument("GaussianChain: reverse tables must have one entry per step");
  for (std::size_t i = 0; i < t; ++i) {
    if (!(beta[i] > 0.0 && beta[i] < 1.0)) throw std::invalid_argument("GaussianChain: beta must lie in (0, 1)");
    if (!(rev_var[i] > 0.0)) throw std::invalid_argument("GaussianChain: reverse variances must be positive");
  }
  if (!(prior_var > 0.0)) throw std::invalid_argument("GaussianChain: prior variance must be positive");
}

GaussianChain GaussianChain::true_reversal(std::vector<double> beta, double mu_star, double var_star) {
  if (!(var_star > 0.0)) throw std::invalid_argument("true_reversal: data variance must be positive");
  GaussianChain c;
  c.beta = std::move(beta);
  const std::size_t steps = c.beta.size();
  c.rev_a.resize(steps);
  c.rev_b.resize(steps);
  c.rev_var.resize(steps);
  double m = mu_star, v = var_star;
  for (std::size_t i = 0; i < steps; ++i) {
    const double alpha = 1.0 - c.beta[i];
    const double v_next = alpha * v + c.beta[i];
    const double a = std::sqrt(alpha) * v / v_next;
    c.rev_a[i] = a;
    c.rev_b[i] = m - a * std::sqrt(alpha) * m;
    c.rev_var[i] = v * c.beta[i] / v_next;
    m *= std::sqrt(alpha);
    v = v_next;
  }
  c.prior_mean = m;
  c.prior_var = v;
  c.validate();
  return c;
}

GaussianChain GaussianChain::with_mean_shift(double delta) const {
  GaussianChain c = *this;
  for (double& b : c.rev_b) b += delta;
  return c;
}

GaussianChain GaussianChain::with_variance_scale(double factor) const {
  GaussianChain c = *this;
  for (double& v : c.rev_var) v *= factor;
  return c;
}

GaussianChain GaussianChain::with_slope_scale(double factor) const {
  GaussianChain c = *this;
  for (double& a : c.rev_a) a *= factor;
  return c;
}

Gaussian1 marginal(const GaussianChain& chain) {
  chain.validate();
  Gaussian1 g{chain.prior_mean, chain.prior_var};
  for (std::size_t i = chain.steps(); i-- > 0;) {
    g.mean = chain.rev_a[i] * g.mean + chain.rev_b[i];
    g.var = chain.rev_a[i] * chain.rev_a[i] * g.var + chain.rev_var[i];
  }
  return g;
}

Gaussian1 forward_marginal(const GaussianChain& chain, double y0, std::size_t t) {
  if (t > chain.steps()) throw std::out_of_range("forward_marginal: step outside the chain");
  const double ab = alpha_bar(chain, t);
  return {std::sqrt(ab) * y0, 1.0 - ab};
}

double exact_loglik(const GaussianChain& chain, double y0) {
  const Gaussian1 g = marginal(chain);
  return normal_logpdf(y0, g.mean, g.var);
}

double elbo_exact(const GaussianChain& chain, double y0) {
  chain.validate();
  const std::size_t steps = chain.steps();

  const Gaussian1 q1 = forward_marginal(chain, y0, 1);
  const double a1 = chain.rev_a[0], b1 = chain.rev_b[0], s1 = chain.rev_var[0];
  const double resid = y0 - a1 * q1.mean - b1;
  double elbo = -0.5 * std::log(2.0 * std::numbers::pi * s1) - (resid * resid + a1 * a1 * q1.var) / (2.0 * s1);

  for (std::size_t t = 2; t <= steps; ++t) {
    const double beta = chain.beta[t - 1];
    const double ab = alpha_bar(chain, t), ab_prev = alpha_bar(chain, t - 1);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double post_var = beta * (1.0 - ab_prev) / (1.0 - ab);
    const Gaussian1 qt = forward_marginal(chain, y0, t);
    const double a = chain.rev_a[t - 1], b = chain.rev_b[t - 1], s = chain.rev_var[t - 1];
    const double gap_mean = (ct - a) * qt.mean + c0 * y0 - b;
    const double gap_sq = gap_mean * gap_mean + (ct - a) * (ct - a) * qt.var;
    elbo -= 0.5 * (post_var / s + gap_sq / s - 1.0 + std::log(s / post_var));
  }

  const Gaussian1 qt = forward_marginal(chain, y0, steps);
  elbo -= gaussian_kl(qt.mean, qt.var, chain.prior_mean, chain.prior_var);
  return elbo;
}

double log_weight(const GaussianChain& chain, double y0, const std::vector<double>& path) {
  const std::size_t steps = chain.steps();
  if (path.size() != steps) throw std::invalid_argument("log_weight: path length differs from the chain");
  double lw = normal_logpdf(path[steps - 1], chain.prior_mean, chain.prior_var);
  double prev = y0;
  for (std::size_t i = 0; i < steps; ++i) {
    lw += normal_logpdf(prev, chain.rev_a[i] * path[i] + chain.rev_b[i], chain.rev_var[i]);
    lw -= normal_logpdf(path[i], std::sqrt(1.0 - chain.beta[i]) * prev, chain.beta[i]);
    prev = path[i];
  }
  return lw;
}

BoundEstimates cubo_estimate(const GaussianChain& chain, double y0, std::size_t n, std::uint64_t seed) {
  chain.validate();
  if (n < kMinCuboSamples)
    throw std::invalid_argument("cubo_estimate: need at least " + std::to_string(kMinCuboSamples) + " samples");
  const std::size_t steps = chain.steps();
  std::vector<double> sqrt_alpha(steps), sqrt_beta(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    sqrt_alpha[i] = std::sqrt(1.0 - chain.beta[i]);
    sqrt_beta[i] = std::sqrt(chain.beta[i]);
  }

  RngStream rng(seed, "bounds.cubo");
  std::vector<double> two_lw(n);
  std::vector<double> path(steps);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    double prev = y0;
    for (std::size_t i = 0; i < steps; ++i) {
      path[i] = sqrt_alpha[i] * prev + sqrt_beta[i] * rng.normal();
      prev = path[i];
    }
    two_lw[k] = 2.0 * log_weight(chain, y0, path);
    mx = std::max(mx, two_lw[k]);
  }
  if (!std::isfinite(mx)) throw NumericError("cubo_estimate: every importance weight is zero");

  double sum = 0.0, sum_sq = 0.0;
  for (double v : two_lw) {
    const double u = std::exp(v - mx);
    sum += u;
    sum_sq += u * u;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1.0));

  BoundEstimates est;
  est.exact_logp = exact_loglik(chain, y0);
  est.elbo = elbo_exact(chain, y0);
  est.cubo = 0.5 * (mx + std::log(mean));
  est.cubo_stderr = 0.5 * std::sqrt(var / nn) / mean;
  est.n_samples = n;
  if (!std::isfinite(est.cubo) || !std::isfinite(est.cubo_stderr))
    throw NumericError("cubo_estimate: non-finite estimate");
  return est;
}

double gaussian_mi(double rho) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("gaussian_mi: |rho| must be below 1");
  return -0.5 * std::log(1.0 - rho * rho);
}

PositiveDecomposition joint_positive_decomposition(const GaussianChain& chain, double y0, double y0p, double rho,
                                                   std::size_t n, std::uint64_t seed) {
  chain.validate();
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("joint_positive_decomposition: |rho| must be below 1");
  if (n < 2) throw std::invalid_argument("joint_positive_decomposition: need at least two samples");
  const std::size_t steps = chain.steps();
  const Gaussian1 qa = forward_marginal(chain, y0, steps);
  const Gaussian1 qp = forward_marginal(chain, y0p, steps);
  const double sd = std::sqrt(qa.var);
  const double side = std::sqrt(1.0 - rho * rho);

  RngStream rng(seed, "bounds.mi");
  double s_ab = 0.0, s_aa = 0.0, s_bb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double ya = y0, yb = y0p;
    for (std::size_t i = 0; i < steps; ++i) {
      const double e = rng.normal();
      const double e2 = rho * e + side * rng.normal();
      const double sa = std::sqrt(1.0 - chain.beta[i]), sb = std::sqrt(chain.beta[i]);
      ya = sa * ya + sb * e;
      yb = sa * yb + sb * e2;
    }
    const double u = (ya - qa.mean) / sd, v = (yb - qp.mean) / sd;
    s_ab += u * v;
    s_aa += u * u;
    s_bb += v * v;
  }
  const double r = s_ab / std::sqrt(s_aa * s_bb);

  PositiveDecomposition out;
  out.elbo_anchor = elbo_exact(chain, y0);
  out.elbo_pos = elbo_exact(chain, y0p);
  out.mi = gaussian_mi(r);
  out.mi_stderr = std::abs(r) / std::sqrt(static_cast<double>(n));
  out.joint = out.elbo_anchor + out.elbo_pos + out.mi;
  return out;
}

std::vector<ChainCase> reference_cases() {
  const auto base3 = GaussianChain::true_reversal({0.1, 0.2, 0.3}, 0.5, 1.0);
  const auto base5 = GaussianChain::true_reversal({0.05, 0.1, 0.15, 0.2, 0.25}, -1.0, 0.5);
  const auto base1 = GaussianChain::true_reversal({0.3}, 2.0, 2.0);
  const auto base4 = GaussianChain::true_reversal({0.2, 0.2, 0.2, 0.2}, 0.0, 1.0);
  return {
      {"matched-T3", base3, 0.3, true},
      {"matched-T5", base5, -0.6, true},
      {"mean-shift-T3", base3.with_mean_shift(0.1), 0.3, false},
      {"mean-shift-T5", base5.with_mean_shift(-0.2), -0.8, false},
      {"variance-T1", base1.with_variance_scale(1.5), 1.5, false},
      {"slope-T4", base4.with_slope_scale(0.9), 0.7, false},
      {"mixed-T5", base5.with_mean_shift(0.3).with_variance_scale(0.8), -1.2, false},
  };
}

VerifyReport verify_bounds(std::size_t n, std::uint64_t seed) {
  VerifyReport report;
  report.pass = true;
  std::uint64_t index = 0;
  for (const auto& c : reference_cases()) {
    CaseReport cr;
    cr.config = c;
    cr.estimates = cubo_estimate(c.chain, c.y0, n, mix64(seed ^ mix64(++index)));
    const auto& e = cr.estimates;
    const bool upper = e.exact_logp <= e.cubo + 3.0 * e.cubo_stderr;
    if (c.matched) {
      cr.sandwich = std::abs(e.elbo - e.exact_logp) <= kExactTolerance && upper;
      cr.pass = cr.sandwich && std::abs(e.cubo - e.exact_logp) <= 3.0 * e.cubo_stderr;
    } else {
      cr.sandwich = e.elbo < e.exact_logp && upper;
      cr.pass = cr.sandwich;
    }
    report.pass = report.pass && cr.pass;
    report.cases.push_back(std::move(cr));
  }
  const auto chain = GaussianChain::true_reversal({0.1, 0.2, 0.3}, 0.5, 1.0);
  report.independent = joint_positive_decomposition(chain, 0.3, 0.35, 0.0, n, mix64(seed ^ 0x11));
  report.correlated = joint_positive_decomposition(chain, 0.3, 0.35, report.correlated_rho, n, mix64(seed ^ 0x22));
  report.mi_pass = std::abs(report.independent.mi) <= 3.0 * report.independent.mi_stderr &&
                   std::abs(report.correlated.mi - gaussian_mi(report.correlated_rho)) <=
                       3.0 * report.correlated.mi_stderr;
  report.pass = report.pass && report.mi_pass;
  return report;
}

std::string format_report(const VerifyReport& report) {
  std::ostringstream os;
  os.precision(10);
  for (const auto& c : report.cases) {
    const auto& e = c.estimates;
    os << c.config.name << ": elbo=" << e.elbo << " exact=" << e.exact_logp << " cubo=" << e.cubo << " +- "
       << e.cubo_stderr << " n=" << e.n_samples << " sandwich=" << (c.sandwich ? "pass" : "FAIL")
       << " result=" << (c.pass ? "pass" : "FAIL") << '\n';
  }
  os << "mi-independent: mi=" << report.independent.mi << " +- " << report.independent.mi_stderr
     << " joint=" << report.independent.joint
     << " parts=" << report.independent.elbo_anchor + report.independent.elbo_pos << '\n';
  os << "mi-correlated(rho=" << report.correlated_rho << "): mi=" << report.correlated.mi << " +- "
     << report.correlated.mi_stderr << " closed-form=" << gaussian_mi(report.correlated_rho) << '\n';
  os << "mi: " << (report.mi_pass ? "pass" : "FAIL") << '\n';
  os << "overall: " << (report.pass ? "pass" : "FAIL") << '\n';
  return os.str();
}

}  // namespace markdiff::bounds
