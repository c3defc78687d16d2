// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>

#include "markdiff/autodiff.hpp"
#include "markdiff/dense_array.hpp"

namespace markdiff {

// Named parameter tensors, iterated in lexicographic name order so that
// flattening and serialization are stable.
class ParamSet {
 public:
  void add(const std::string& name, DenseArray value);
  bool contains(std::string_view name) const;
  const DenseArray& get(std::string_view name) const;
  DenseArray& get(std::string_view name);
  const std::map<std::string, DenseArray, std::less<>>& entries() const noexcept { return entries_; }
  std::size_t count() const noexcept { return entries_.size(); }
  std::size_t total_size() const;

  DenseArray flatten() const;
  void assign_flat(const DenseArray& flat);
  // Same names with the same shapes.
  bool same_layout(const ParamSet& other) const;
  // A set with the same layout and all values zero.
  ParamSet zeros_like() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::map<std::string, DenseArray, std::less<>> entries_;
};

// Gaussian initialisation with standard deviation `stddev`, drawn from a
// stream keyed by the parameter name.
DenseArray init_normal(const Shape& shape, double stddev, std::uint64_t seed, std::string_view name);

// Parameter name -> graph variable for one evaluation.
class Bindings {
 public:
  // One leaf per parameter; trainable leaves collect gradients.
  static Bindings leaves(ad::Graph& graph, const ParamSet& params, bool trainable);
  // Slices of a single flat parameter vector laid out like `layout`.
  static Bindings from_flat(const ParamSet& layout, const ad::Var& flat);

  ad::Var operator[](std::string_view name) const;
  bool contains(std::string_view name) const;
  ad::Graph& graph() const { return *graph_; }

  // Adds d(root)/d(param) from the last backward pass into `grads`.
  void accumulate_grads(ParamSet& grads) const;

 private:
  ad::Graph* graph_ = nullptr;
  std::map<std::string, ad::Var, std::less<>> vars_;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state, double lr,
                 const AdamOptions& options = {});

}  // namespace markdiff
