// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/checks.hpp"

#include <cmath>

#include "markdiff/ccam.hpp"
#include "markdiff/diffusion.hpp"
#include "markdiff/encoders.hpp"
#include "markdiff/rng.hpp"
#include "markdiff/unet.hpp"

namespace markdiff {
namespace {

using ad::Var;

DenseArray random_array(const Shape& shape, RngStream& rng, double scale = 1.0) {
  DenseArray a(shape);
  for (double& v : a.data()) v = scale * rng.normal();
  return a;
}

DenseArray random_image(std::size_t h, std::size_t w, RngStream& rng) {
  DenseArray a({h, w});
  for (double& v : a.data()) v = rng.uniform();
  return a;
}

ModelConfig toy_model(std::size_t h, std::size_t w) {
  ModelConfig m;
  m.encoder.image_height = h;
  m.encoder.image_width = w;
  m.encoder.d_model = 4;
  m.encoder.max_tokens = 8;
  m.encoder.conv_channels = {2, 3, 3, 3};
  m.unet.channels = {2, 3, 3};
  m.unet.attn_dim = 3;
  m.unet.time_dim = 4;
  m.unet.ccam_blocks = 2;
  m.unet.crossattn_blocks = 2;
  return m;
}

constexpr double kScale = 0.5;

// Redraws every entry as N(0, scale^2), keeping the layout.
ParamSet randomize(const ParamSet& layout, RngStream& rng, double scale) {
  ParamSet out;
  for (const auto& [name, value] : layout.entries()) out.add(name, random_array(value.shape(), rng, scale));
  return out;
}

// Parameters plus extra named inputs, flattened together.
GradCase run(const std::string& name, double threshold, const ParamSet& layout, double eps,
             const std::function<Var(const Bindings&)>& loss) {
  const ScalarLoss f = [&](ad::Graph&, const Var& flat) { return loss(Bindings::from_flat(layout, flat)); };
  return {name, threshold, grad_check(f, layout.flatten(), eps)};
}

}  // namespace

std::vector<GradCase> gradcheck_suite(std::uint64_t seed, double eps) {
  std::vector<GradCase> out;

  {
    RngStream rng(seed, "gradcheck.fa");
    ParamSet ps;
    ps.add("c", random_array({3, 4}, rng));
    ps.add("t", random_array({3, 4}, rng));
    out.push_back(run("l_fa", kGradTolerance, ps, eps,
                      [](const Bindings& p) { return encoders::fa_loss(p["c"], p["t"]); }));
  }
  {
    RngStream rng(seed, "gradcheck.cl");
    ParamSet ps;
    for (const char* n : {"za", "zp", "zn0", "zn1", "zn2"}) {
      DenseArray v = random_array({6}, rng);
      double norm = 0.0;
      for (double x : v.data()) norm += x * x;
      for (double& x : v.data()) x /= std::sqrt(norm);
      ps.add(n, v);
    }
    for (auto mode : {diffusion::ClDenominator::WithPositive, diffusion::ClDenominator::NegativesOnly}) {
      const std::string name =
          mode == diffusion::ClDenominator::WithPositive ? "l_cl(with_positive)" : "l_cl(negatives_only)";
      out.push_back(run(name, kGradTolerance, ps, eps, [mode](const Bindings& p) {
        const std::vector<Var> negs{ad::l2_normalize(p["zn0"]), ad::l2_normalize(p["zn1"]),
                                    ad::l2_normalize(p["zn2"])};
        return diffusion::contrastive_loss(ad::l2_normalize(p["za"]), ad::l2_normalize(p["zp"]), negs, 0.5, mode);
      }));
    }
  }
  {
    RngStream rng(seed, "gradcheck.encoders");
    const ModelConfig m = toy_model(16, 32);
    ParamSet ps;
    encoders::init_params(ps, m.encoder, seed);
    ps = randomize(ps, rng, kScale);
    const DenseArray image = random_image(16, 32, rng);
    const auto tokens = markup::tokenize("x^{2}+1");
    out.push_back(run("encoders+l_fa", kGradTolerance, ps, eps, [&](const Bindings& p) {
      const Var t = encoders::encode_markup(p, m.encoder, tokens);
      const Var feats = encoders::encode_image(p, m.encoder, p.graph().constant(image));
      const Var h = encoders::bidir_context(p, encoders::map_to_sequence(p, feats));
      return encoders::fa_loss(encoders::cam(p, t, h).aligned, t);
    }));
  }
  {
    RngStream rng(seed, "gradcheck.ccam");
    ParamSet ps;
    ccam::init_ccam_block(ps, "blk", {4, 5, 3}, seed);
    ps.add("in.v", random_array({6, 4}, rng));
    ps.add("in.t", random_array({3, 5}, rng));
    const DenseArray probe = random_array({6, 4}, rng);
    out.push_back(run("ccam_block", kGradTolerance, ps, eps, [&](const Bindings& p) {
      const Var y = ccam::ccam_block(p, "blk", p["in.v"], p["in.t"]);
      return ad::dot(y, p.graph().constant(probe));
    }));
  }
  {
    RngStream rng(seed, "gradcheck.total");
    const ModelConfig m = toy_model(4, 8);
    const ParamSet ps = randomize(init_model(m, seed), rng, kScale);
    const NoiseSchedule schedule(1, 0.3, 0.3);
    diffusion::LossWeights w;
    w.lambda = 0.5;
    w.beta_fa = 0.5;
    w.num_negatives = 2;
    diffusion::LossInputs in;
    in.tokens = markup::tokenize("a+b");
    in.anchor = random_image(4, 8, rng);
    in.positive = random_image(4, 8, rng);
    in.negatives = {random_image(4, 8, rng), random_image(4, 8, rng)};
    in.step = 1;
    in.eps = random_array({4, 8}, rng);
    out.push_back(run("total_loss(T=1)", kGradTolerance, ps, eps, [&](const Bindings& p) {
      return diffusion::total_loss(p, m, schedule, w, in).total;
    }));
  }
  {
    RngStream rng(seed, "gradcheck.unet");
    const ModelConfig m = toy_model(8, 16);
    ParamSet ps;
    init_unet(ps, m, seed);
    ps.add("in.markup", random_array({3, 4}, rng));
    const DenseArray y_t = random_array({8, 16}, rng);
    const DenseArray probe = random_array({8, 16}, rng);
    const NoiseSchedule schedule(5, 0.01, 0.2);
    out.push_back(run("unet_eps", kDeepGradTolerance, ps, eps, [&](const Bindings& p) {
      const Var e = unet_eps(p, m, schedule, p.graph().constant(y_t), 3, p["in.markup"]);
      return ad::dot(e, p.graph().constant(probe));
    }));
  }
  return out;
}

}  // namespace markdiff
