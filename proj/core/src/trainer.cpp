// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "markdiff/bounds.hpp"
#include "markdiff/checkpoint.hpp"
#include "markdiff/checks.hpp"
#include "markdiff/errors.hpp"
#include "markdiff/metrics.hpp"

namespace markdiff {
namespace {

constexpr std::string_view kAdamM = "adam.m.";
constexpr std::string_view kAdamV = "adam.v.";
constexpr std::string_view kStepKey = "train.step";

markup::RenderOptions render_options(const RunConfig& cfg) {
  markup::RenderOptions o;
  o.height = cfg.image_height;
  o.width = cfg.image_width;
  return o;
}

// Batch positions -> corpus indices.
std::vector<std::size_t> draw_batch(std::size_t corpus_size, std::size_t batch, RngStream& rng) {
  std::vector<std::size_t> idx(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) idx[i] = i;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(corpus_size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(batch);
  return idx;
}

bool all_finite(const ParamSet& ps) {
  for (const auto& [name, value] : ps.entries())
    if (!value.all_finite()) return false;
  return true;
}

}  // namespace

Trainer::Trainer(RunConfig cfg, Corpus corpus)
    : cfg_(std::move(cfg)),
      model_(cfg_.model()),
      schedule_(cfg_.schedule()),
      weights_(cfg_.loss_weights()),
      corpus_(std::move(corpus)) {
  cfg_.validate();
  if (corpus_.size() < cfg_.batch)
    throw ConfigError("corpus has " + std::to_string(corpus_.size()) + " documents, batch needs " +
                      std::to_string(cfg_.batch));
  for (const auto& img : corpus_.images)
    if (img.height != cfg_.image_height || img.width != cfg_.image_width || img.channels != 1)
      throw ConfigError("corpus image shape differs from the configured image size");
  params_ = init_model(model_, cfg_.seed);
  adam_.m = params_.zeros_like();
  adam_.v = params_.zeros_like();
}

double Trainer::learning_rate(std::uint64_t step) const {
  const double s = static_cast<double>(step);
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
    return cfg_.lr * (s + 1.0) / static_cast<double>(cfg_.warmup_steps);
  if (cfg_.lr_schedule == "cosine") {
    const double span = static_cast<double>(std::max<std::size_t>(1, cfg_.steps - cfg_.warmup_steps));
    const double progress = std::min(1.0, (s - static_cast<double>(cfg_.warmup_steps)) / span);
    return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return cfg_.lr;
}

StepRecord Trainer::step() {
  const std::uint64_t s = adam_.step;
  RngStream batch_rng(cfg_.seed, "train.batch", s);
  const auto batch = draw_batch(corpus_.size(), cfg_.batch, batch_rng);
  const std::size_t anchors = cfg_.anchors_per_step;

  std::vector<ParamSet> grads(anchors);
  std::vector<diffusion::LossBundle> bundles(anchors);
  std::vector<std::exception_ptr> errors(anchors);

  auto work = [&](std::size_t j) {
    try {
      RngStream rng(cfg_.seed, "train.item", s, j);
      const std::size_t doc = batch[j];
      diffusion::LossInputs in;
      in.tokens = corpus_.docs[doc].tokens;
      in.anchor = to_array(corpus_.images[doc]);
      in.step = diffusion::sample_step(schedule_, rng);
      in.eps = diffusion::standard_normal(in.anchor.shape(), rng);
      in.positive = to_array(diffusion::make_positive(corpus_.images[doc], rng));
      if (weights_.lambda > 0.0)
        for (std::size_t k : diffusion::sample_negatives(batch.size(), j, weights_.num_negatives, rng))
          in.negatives.push_back(to_array(corpus_.images[batch[k]]));

      ad::Graph graph;
      const Bindings p = Bindings::leaves(graph, params_, true);
      const auto vars = diffusion::total_loss(p, model_, schedule_, weights_, in);
      bundles[j] = vars.values();
      graph.backward(vars.total);
      grads[j] = params_.zeros_like();
      p.accumulate_grads(grads[j]);
    } catch (const std::invalid_argument& e) {
      errors[j] = std::make_exception_ptr(NumericError("step " + std::to_string(s + 1) + " aborted: " + e.what()));
    } catch (...) {
      errors[j] = std::current_exception();
    }
  };

  const std::size_t threads = std::min(cfg_.threads, anchors);
  if (threads <= 1) {
    for (std::size_t j = 0; j < anchors; ++j) work(j);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < anchors; j += threads) work(j);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ParamSet total = params_.zeros_like();
  StepRecord rec;
  const double inv = 1.0 / static_cast<double>(anchors);
  for (std::size_t j = 0; j < anchors; ++j) {
    for (const auto& [name, g] : grads[j].entries()) {
      DenseArray& dst = total.get(name);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += inv * g[i];
    }
    rec.loss.l_fa += inv * bundles[j].l_fa;
    rec.loss.elbo_anchor += inv * bundles[j].elbo_anchor;
    rec.loss.elbo_pos += inv * bundles[j].elbo_pos;
    rec.loss.eubo_neg_term += inv * bundles[j].eubo_neg_term;
    rec.loss.l_cl += inv * bundles[j].l_cl;
    rec.loss.total += inv * bundles[j].total;
  }
  if (!all_finite(total)) throw NumericError("non-finite gradient at step " + std::to_string(s + 1));

  rec.lr = learning_rate(s);
  ParamSet next = params_;
  AdamState next_adam = adam_;
  adam_update(next, total, next_adam, rec.lr);
  if (!all_finite(next)) throw NumericError("non-finite parameters after step " + std::to_string(s + 1));
  params_ = std::move(next);
  adam_ = std::move(next_adam);
  rec.step = adam_.step;
  return rec;
}

ParamSet Trainer::state() const {
  ParamSet out = params_;
  for (const auto& [name, value] : adam_.m.entries()) out.add(std::string(kAdamM) + name, value);
  for (const auto& [name, value] : adam_.v.entries()) out.add(std::string(kAdamV) + name, value);
  out.add(std::string(kStepKey), DenseArray::scalar(static_cast<double>(adam_.step)));
  return out;
}

void Trainer::restore(const ParamSet& state) {
  ParamSet params, m, v;
  double step = -1.0;
  for (const auto& [name, value] : state.entries()) {
    if (name.starts_with(kAdamM))
      m.add(name.substr(kAdamM.size()), value);
    else if (name.starts_with(kAdamV))
      v.add(name.substr(kAdamV.size()), value);
    else if (name == kStepKey)
      step = value.item();
    else
      params.add(name, value);
  }
  if (!params.same_layout(params_))
    throw ConfigError("checkpoint parameters do not match the configured model (names or shapes differ)");
  if (!m.same_layout(params_) || !v.same_layout(params_) || !(step >= 0.0))
    throw ConfigError("checkpoint lacks a complete optimizer state");
  params_ = std::move(params);
  adam_.m = std::move(m);
  adam_.v = std::move(v);
  adam_.step = static_cast<std::uint64_t>(step);
}

ParamSet model_params(const ParamSet& state) {
  ParamSet out;
  for (const auto& [name, value] : state.entries())
    if (!name.starts_with(kAdamM) && !name.starts_with(kAdamV) && name != kStepKey) out.add(name, value);
  return out;
}

std::string loss_log_header() { return "step,lr,l_fa,elbo_anchor,elbo_pos,eubo_neg_term,l_cl,total"; }

std::string loss_log_row(const StepRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(r.step), r.lr, r.loss.l_fa, r.loss.elbo_anchor, r.loss.elbo_pos,
                r.loss.eubo_neg_term, r.loss.l_cl, r.loss.total);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_corpus(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  write_corpus(out_dir, build_corpus(cfg.seed, cfg.corpus_size, render_options(cfg)));
}

namespace {

// Keeps header and rows with step <= last_step.
void truncate_log(const std::filesystem::path& path, std::uint64_t last_step) {
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (keep.empty()) {
        keep.push_back(line);
        continue;
      }
      if (std::stoull(line.substr(0, line.find(','))) <= last_step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot rewrite " + path.string());
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

TrainSummary cmd_train(const RunConfig& cfg, std::ostream& progress) {
  cfg.validate();
  Trainer trainer(cfg, read_corpus(cfg.corpus_dir));
  const std::filesystem::path out_dir = cfg.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  TrainSummary summary;
  summary.checkpoint = out_dir / "checkpoint.fsac";
  summary.loss_log = out_dir / "loss.csv";

  bool append = false;
  if (!cfg.resume_from.empty()) {
    trainer.restore(load_checkpoint(cfg.resume_from));
    if (std::filesystem::exists(summary.loss_log)) {
      truncate_log(summary.loss_log, trainer.steps_done());
      append = true;
    }
  }
  {
    std::ofstream conf(out_dir / "config.json", std::ios::trunc);
    if (!conf) throw IoError("cannot write " + (out_dir / "config.json").string());
    conf << config_to_json(cfg);
  }
  std::ofstream log(summary.loss_log, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + summary.loss_log.string());
  if (!append) log << loss_log_header() << '\n';

  summary.first_step = trainer.steps_done() + 1;
  bool first = true;
  while (trainer.steps_done() < cfg.steps) {
    StepRecord rec;
    try {
      rec = trainer.step();
    } catch (const NumericError&) {
      log.flush();
      save_checkpoint(summary.checkpoint, trainer.state());
      throw;
    }
    log << loss_log_row(rec) << '\n';
    if (first) summary.initial_total = rec.loss.total;
    first = false;
    summary.final_total = rec.loss.total;
    summary.last_step = rec.step;
    if (rec.step % cfg.checkpoint_every == 0 || rec.step == cfg.steps) {
      log.flush();
      save_checkpoint(summary.checkpoint, trainer.state());
      progress << "step " << rec.step << " total " << rec.loss.total << '\n';
    }
  }
  log.flush();
  if (!log) throw IoError("write failed for " + summary.loss_log.string());
  if (first) save_checkpoint(summary.checkpoint, trainer.state());
  return summary;
}

std::vector<std::filesystem::path> cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                              const std::vector<std::string>& texts,
                                              const std::filesystem::path& out_dir) {
  cfg.validate();
  const ModelConfig model = cfg.model();
  const NoiseSchedule schedule = cfg.schedule();
  const ParamSet params = model_params(load_checkpoint(checkpoint));
  if (!params.same_layout(init_model(model, cfg.seed)))
    throw ConfigError("checkpoint parameters do not match the configured model (names or shapes differ)");

  std::vector<markup::MarkupDoc> docs;
  std::vector<std::string> names;
  if (texts.empty()) {
    const Corpus corpus = read_corpus(cfg.corpus_dir);
    docs = corpus.docs;
    for (std::size_t i = 0; i < docs.size(); ++i) names.push_back(image_filename(i));
  } else {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      docs.push_back(markup::MarkupDoc::from_text(texts[i]));
      names.push_back("sample_" + image_filename(i));
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written(docs.size());
  std::vector<Image> images(docs.size());
  std::vector<std::exception_ptr> errors(docs.size());
  auto work = [&](std::size_t i) {
    try {
      RngStream rng(cfg.seed, "sample", i);
      images[i] = diffusion::ddpm_sample(params, model, schedule, docs[i].tokens, rng);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t threads = std::min<std::size_t>(cfg.threads, docs.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < docs.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < docs.size(); i += threads) work(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    written[i] = out_dir / names[i];
    write_pgm(written[i], images[i]);
  }
  return written;
}

std::string cmd_eval(const std::filesystem::path& generated_dir, const std::filesystem::path& truth_dir,
                     bool allow_partial, const std::filesystem::path& csv_path) {
  const auto report = metrics::evaluate_set(generated_dir, truth_dir, allow_partial);
  const std::string csv = metrics::to_csv(report);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv_path.string());
    out << csv;
    if (!out) throw IoError("write failed for " + csv_path.string());
  }
  return csv;
}

bool cmd_verify_bounds(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto report = bounds::verify_bounds(cfg.verify_samples, cfg.seed);
  out << bounds::format_report(report);
  return report.pass;
}

bool cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  bool ok = true;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-22s %14s %10s %8s %s\n", "loss", "max_rel_err", "threshold", "coords", "result");
  out << buf;
  for (const auto& c : gradcheck_suite(cfg.seed, cfg.gradcheck_eps)) {
    std::snprintf(buf, sizeof buf, "%-22s %14.3e %10.1e %8zu %s\n", c.name.c_str(), c.report.max_rel_err,
                  c.threshold, c.report.checked, c.pass() ? "pass" : "FAIL");
    out << buf;
    if (!c.report.diagnostic.empty()) out << "  " << c.report.diagnostic << '\n';
    ok = ok && c.pass();
  }
  return ok;
}

}  // namespace markdiff
