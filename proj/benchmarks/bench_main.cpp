// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <filesystem>

#include "markdiff/autodiff.hpp"
#include "markdiff/bounds.hpp"
#include "markdiff/config.hpp"
#include "markdiff/corpus.hpp"
#include "markdiff/diffusion.hpp"
#include "markdiff/encoders.hpp"
#include "markdiff/metrics.hpp"
#include "markdiff/rng.hpp"
#include "markdiff/trainer.hpp"
#include "markdiff/unet.hpp"

namespace {

using namespace markdiff;

DenseArray noise(const Shape& shape, RngStream& rng) {
  DenseArray a(shape);
  for (double& v : a.data()) v = rng.normal();
  return a;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  RngStream rng(1, "bench.conv");
  const DenseArray x = noise({c, 32, 128}, rng), w = noise({c, c, 3, 3}, rng), b = noise({c}, rng);
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var bias = g.variable(b);
    const ad::Var y = ad::conv2d(g.variable(x), g.variable(w), &bias, 1, 1);
    g.backward(ad::sum(y));
    benchmark::DoNotOptimize(y.value().raw());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_UnetEps(benchmark::State& state) {
  const RunConfig cfg;
  const ModelConfig model = cfg.model();
  const NoiseSchedule schedule = cfg.schedule();
  const ParamSet params = init_model(model, cfg.seed);
  const Corpus corpus = build_corpus(cfg.seed, 1);
  RngStream rng(2, "bench.unet");
  const DenseArray y = noise({cfg.image_height, cfg.image_width}, rng);
  for (auto _ : state) {
    ad::Graph g(false);
    const Bindings p = Bindings::leaves(g, params, false);
    const ad::Var markup = encoders::encode_markup(p, model.encoder, corpus.docs[0].tokens);
    benchmark::DoNotOptimize(unet_eps(p, model, schedule, g.constant(y), 25, markup).value().raw());
  }
}
BENCHMARK(BM_UnetEps)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg;
  const Corpus corpus = build_corpus(cfg.seed, cfg.corpus_size);
  Trainer trainer(cfg, corpus);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().loss.total);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Dtw(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  RngStream rng(3, "bench.dtw");
  Image a(32, width), b(32, width);
  for (double& v : a.pixels) v = rng.uniform();
  for (double& v : b.pixels) v = rng.uniform();
  const auto sa = metrics::binarize(a), sb = metrics::binarize(b);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::dtw(sa, sb));
}
BENCHMARK(BM_Dtw)->Arg(128)->Arg(512);

void BM_CuboEstimate(benchmark::State& state) {
  const auto cases = bounds::reference_cases();
  for (auto _ : state)
    benchmark::DoNotOptimize(bounds::cubo_estimate(cases[0].chain, cases[0].y0, 100000, 4).cubo);
}
BENCHMARK(BM_CuboEstimate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
