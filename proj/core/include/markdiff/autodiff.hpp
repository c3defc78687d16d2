// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "markdiff/dense_array.hpp"

namespace markdiff::ad {

class Graph;

// Handle to a node recorded in a Graph. Cheap to copy; only valid while the
// owning graph is alive.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }

  const DenseArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

// One evaluation context. Nodes are appended in topological order, so the
// reverse sweep is a single pass over the node list. A graph is never shared
// between threads.
class Graph {
 public:
  // With record == false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(DenseArray value);
  Var variable(DenseArray value);

  // Records an op. `backward` is dropped when no input requires a gradient.
  Var apply(DenseArray value, std::vector<Var> inputs, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 and sweeps backwards. Nodes whose incoming
  // gradient is absent or identically zero are skipped.
  void backward(const Var& root);

  const DenseArray& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(const Var& v) const { return !nodes_[v.id()].grad.empty(); }
  // Gradient of the last backward root with respect to v; zeros if none flowed.
  DenseArray grad(const Var& v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  friend class BackwardContext;
  struct Node {
    DenseArray value;
    DenseArray grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  DenseArray& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;
  bool record_;
};

class BackwardContext {
 public:
  BackwardContext(Graph& graph, std::size_t node) : graph_(graph), node_(node) {}

  const DenseArray& grad_out() const { return graph_.nodes_[node_].grad; }
  const DenseArray& value_out() const { return graph_.nodes_[node_].value; }
  const DenseArray& input(std::size_t i) const {
    return graph_.nodes_[graph_.nodes_[node_].inputs[i]].value;
  }
  bool needs(std::size_t i) const {
    return graph_.nodes_[graph_.nodes_[node_].inputs[i]].requires_grad;
  }
  // Gradient accumulator of input i, zero-initialised on first use.
  DenseArray& grad_in(std::size_t i) {
    return graph_.grad_buffer(graph_.nodes_[node_].inputs[i]);
  }

 private:
  Graph& graph_;
  std::size_t node_;
};

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
// factor * a + shift, with shift a constant array of a's shape.
Var affine(const Var& a, double factor, const DenseArray& shift);
// x: (m, n), bias: n elements, added to every row.
Var add_bias(const Var& x, const Var& bias);
// x: (m, n), row: n elements, multiplied into every row.
Var mul_row(const Var& x, const Var& row);
// x: (C, H, W), bias: C elements, added to every spatial position.
Var add_channel(const Var& x, const Var& bias);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var silu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
// exp(min(a, cap)); the derivative is zero where a > cap.
Var exp_clamped(const Var& a, double cap);

// ---------------------------------------------------------------------------
// Reductions (results have shape {1})

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);
Var dot(const Var& a, const Var& b);
// log(sum(exp(a))) with max subtraction.
Var log_sum_exp(const Var& a);

// ---------------------------------------------------------------------------
// Linear algebra and layout

Var matmul(const Var& a, const Var& b);     // (m,k) x (k,n)
Var matmul_nt(const Var& a, const Var& b);  // (m,k) x (n,k)^T
Var transpose(const Var& a);                // rank 2
Var reshape(const Var& a, Shape shape);
// Concatenation / slicing along the leading axis (rows, or channels for rank 3).
Var concat0(std::span<const Var> parts);
Var slice0(const Var& a, std::size_t begin, std::size_t end);
// Rank-2 column concatenation / slicing.
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
// Rows of a rank-2 table selected by index.
Var gather_rows(const Var& table, std::span<const std::size_t> rows);
// a / ||a||_2 over all elements.
Var l2_normalize(const Var& a);

// ---------------------------------------------------------------------------
// Network layers

// Row-wise softmax with max subtraction. When `keep` is non-empty it holds one
// flag per column; columns with flag 0 get probability exactly zero.
Var softmax_rows(const Var& logits, std::span<const char> keep = {});

// x: (Cin, H, W), weight: (Cout, Cin, k, k), optional bias: Cout elements.
Var conv2d(const Var& x, const Var& weight, const Var* bias, std::size_t stride, std::size_t pad);
// Nearest-neighbour 2x upsampling of a (C, H, W) map.
Var upsample2x(const Var& x);
// Mean over the height axis: (C, H, W) -> (C, W).
Var pool_height(const Var& x);

}  // namespace markdiff::ad
