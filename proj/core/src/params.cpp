// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/params.hpp"

#include <cmath>
#include <stdexcept>

#include "markdiff/rng.hpp"

namespace markdiff {

void ParamSet::add(const std::string& name, DenseArray value) {
  if (!entries_.emplace(name, std::move(value)).second)
    throw std::invalid_argument("duplicate parameter '" + name + "'");
}

bool ParamSet::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

const DenseArray& ParamSet::get(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

DenseArray& ParamSet::get(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v.size();
  return n;
}

DenseArray ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& [_, v] : entries_) flat.insert(flat.end(), v.data().begin(), v.data().end());
  const std::size_t n = flat.size();
  return DenseArray(Shape{n}, std::move(flat));
}

void ParamSet::assign_flat(const DenseArray& flat) {
  if (flat.size() != total_size()) throw std::invalid_argument("assign_flat: length mismatch");
  std::size_t offset = 0;
  for (auto& [_, v] : entries_) {
    std::copy_n(flat.raw() + offset, v.size(), v.raw());
    offset += v.size();
  }
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b)
    if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
  return true;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, v] : entries_) out.add(name, DenseArray(v.shape(), 0.0));
  return out;
}

DenseArray init_normal(const Shape& shape, double stddev, std::uint64_t seed, std::string_view name) {
  RngStream rng(seed, "init", hash_string(name));
  DenseArray out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stddev * rng.normal();
  return out;
}

Bindings Bindings::leaves(ad::Graph& graph, const ParamSet& params, bool trainable) {
  Bindings b;
  b.graph_ = &graph;
  for (const auto& [name, value] : params.entries())
    b.vars_.emplace(name, trainable ? graph.variable(value) : graph.constant(value));
  return b;
}

Bindings Bindings::from_flat(const ParamSet& layout, const ad::Var& flat) {
  if (flat.size() != layout.total_size()) throw std::invalid_argument("Bindings::from_flat: length mismatch");
  Bindings b;
  b.graph_ = &flat.graph();
  std::size_t offset = 0;
  for (const auto& [name, value] : layout.entries()) {
    const ad::Var piece = ad::slice0(flat, offset, offset + value.size());
    b.vars_.emplace(name, ad::reshape(piece, value.shape()));
    offset += value.size();
  }
  return b;
}

ad::Var Bindings::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unbound parameter '" + std::string(name) + "'");
  return it->second;
}

bool Bindings::contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }

void Bindings::accumulate_grads(ParamSet& grads) const {
  for (const auto& [name, var] : vars_) {
    if (!graph_->has_grad(var)) continue;
    DenseArray& dst = grads.get(name);
    const DenseArray g = graph_->grad(var);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
}

void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state, double lr, const AdamOptions& options) {
  if (!params.same_layout(grads)) throw std::invalid_argument("adam_update: gradient layout mismatch");
  if (state.m.count() == 0) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (const auto& [name, g] : grads.entries()) {
    DenseArray& p = params.get(name);
    DenseArray& m = state.m.get(name);
    DenseArray& v = state.v.get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g[i];
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options.epsilon);
    }
  }
}

}  // namespace markdiff
