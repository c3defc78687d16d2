// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace markdiff::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const DenseArray& a, std::size_t rows, std::size_t cols) {
  return ConstMatMap(a.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_mat(DenseArray& a, std::size_t rows, std::size_t cols) {
  return MatMap(a.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + msg);
}

void require_same_graph(const Var& a, const Var& b, const char* op) {
  require(a.valid() && b.valid() && &a.graph() == &b.graph(), op, "operands from different graphs");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_graph(a, b, op);
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  require(a.valid() && a.value().rank() == rank, op,
          "expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
}

bool all_zero(const DenseArray& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return v == 0.0; });
}

// Shared implementation for elementwise unary ops. `deriv(x, y)` returns dy/dx.
template <typename F, typename D>
Var unary(const Var& a, F f, D deriv) {
  DenseArray out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.graph().apply(std::move(out), {a}, [deriv](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    const auto& x = ctx.input(0);
    const auto& y = ctx.value_out();
    auto& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

const DenseArray& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(DenseArray value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(DenseArray value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::apply(DenseArray value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (&v.graph() != this) throw std::invalid_argument("apply: input from another graph");
    ids.push_back(v.id());
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node node{std::move(value), {}, {}, {}, needs && record_};
  if (node.requires_grad) {
    node.inputs = std::move(ids);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

DenseArray& Graph::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad = DenseArray(node.value.shape(), 0.0);
  return node.grad;
}

void Graph::backward(const Var& root) {
  if (&root.graph() != this) throw std::invalid_argument("backward: root from another graph");
  if (root.size() != 1) throw std::invalid_argument("backward: root must be a single element");
  if (!record_) throw std::logic_error("backward: graph was built without recording");
  for (auto& node : nodes_) node.grad = DenseArray();
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.empty() || all_zero(node.grad)) continue;
    BackwardContext ctx(*this, i);
    node.backward(ctx);
  }
}

DenseArray Graph::grad(const Var& v) const {
  const auto& node = nodes_[v.id()];
  if (node.grad.empty()) return DenseArray(node.value.shape(), 0.0);
  return node.grad;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.graph().apply(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.needs(k)) continue;
      auto& gi = ctx.grad_in(k);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.graph().apply(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto& ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto& gb = ctx.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.graph().apply(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto& ga = ctx.grad_in(0);
      const auto& bv = ctx.input(1);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (ctx.needs(1)) {
      auto& gb = ctx.grad_in(1);
      const auto& av = ctx.input(0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a.value()[i];
  return a.graph().apply(std::move(out), {a}, [factor](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var add_scalar(const Var& a, double offset) {
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + offset;
  return a.graph().apply(std::move(out), {a}, [](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var affine(const Var& a, double factor, const DenseArray& shift) {
  require(shift.shape() == a.shape(), "affine", "shift shape mismatch");
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a.value()[i] + shift[i];
  return a.graph().apply(std::move(out), {a}, [factor](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_bias");
  require_same_graph(x, bias, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  require(bias.size() == n, "add_bias", "bias length mismatch");
  DenseArray out(x.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.value()[r * n + c] + bias.value()[c];
  return x.graph().apply(std::move(out), {x, bias}, [m, n](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto& gx = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto& gb = ctx.grad_in(1);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

Var mul_row(const Var& x, const Var& row) {
  require_rank(x, 2, "mul_row");
  require_same_graph(x, row, "mul_row");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  require(row.size() == n, "mul_row", "row length mismatch");
  DenseArray out(x.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.value()[r * n + c] * row.value()[c];
  return x.graph().apply(std::move(out), {x, row}, [m, n](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    const auto& xv = ctx.input(0);
    const auto& rv = ctx.input(1);
    if (ctx.needs(0)) {
      auto& gx = ctx.grad_in(0);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * rv[c];
    }
    if (ctx.needs(1)) {
      auto& gr = ctx.grad_in(1);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c] * xv[r * n + c];
    }
  });
}

Var add_channel(const Var& x, const Var& bias) {
  require_rank(x, 3, "add_channel");
  require_same_graph(x, bias, "add_channel");
  const std::size_t channels = x.shape()[0];
  const std::size_t plane = x.shape()[1] * x.shape()[2];
  require(bias.size() == channels, "add_channel", "bias length mismatch");
  DenseArray out(x.shape());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = x.value()[c * plane + p] + bias.value()[c];
  return x.graph().apply(std::move(out), {x, bias}, [channels, plane](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto& gx = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto& gb = ctx.grad_in(1);
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += g[c * plane + p];
        gb[c] += s;
      }
    }
  });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var silu(const Var& a) {
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return unary(
      a, [sig](double x) { return x * sig(x); },
      [sig](double x, double) {
        const double s = sig(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp_clamped(const Var& a, double cap) {
  return unary(
      a, [cap](double x) { return std::exp(std::min(x, cap)); },
      [cap](double x, double y) { return x > cap ? 0.0 : y; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().apply(DenseArray::scalar(s), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var log_sum_exp(const Var& a) {
  const auto& x = a.value();
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x.data()) s += std::exp(v - mx);
  return a.graph().apply(DenseArray::scalar(mx + std::log(s)), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    const double lse = ctx.value_out()[0];
    const auto& xv = ctx.input(0);
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * std::exp(xv[i] - lse);
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return a.graph().apply(DenseArray::scalar(s), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    const auto& x = ctx.input(0);
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * x[i];
  });
}

Var dot(const Var& a, const Var& b) {
  require_same_graph(a, b, "dot");
  require(a.size() == b.size(), "dot", "length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.value()[i] * b.value()[i];
  return a.graph().apply(DenseArray::scalar(s), {a, b}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    if (ctx.needs(0)) {
      auto& ga = ctx.grad_in(0);
      const auto& bv = ctx.input(1);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    }
    if (ctx.needs(1)) {
      auto& gb = ctx.grad_in(1);
      const auto& av = ctx.input(0);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require_same_graph(a, b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul",
          "inner extent mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  DenseArray out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  return a.graph().apply(std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const auto g = as_mat(ctx.grad_out(), m, n);
    if (ctx.needs(0)) as_mat(ctx.grad_in(0), m, k).noalias() += g * as_mat(ctx.input(1), k, n).transpose();
    if (ctx.needs(1)) as_mat(ctx.grad_in(1), k, n).noalias() += as_mat(ctx.input(0), m, k).transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  require_same_graph(a, b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  require(b.shape()[1] == k, "matmul_nt",
          "inner extent mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  DenseArray out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), n, k).transpose();
  return a.graph().apply(std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const auto g = as_mat(ctx.grad_out(), m, n);
    if (ctx.needs(0)) as_mat(ctx.grad_in(0), m, k).noalias() += g * as_mat(ctx.input(1), n, k);
    if (ctx.needs(1)) as_mat(ctx.grad_in(1), n, k).noalias() += g.transpose() * as_mat(ctx.input(0), m, k);
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  DenseArray out({n, m});
  as_mat(out, n, m) = as_mat(a.value(), m, n).transpose();
  return a.graph().apply(std::move(out), {a}, [m, n](BackwardContext& ctx) {
    as_mat(ctx.grad_in(0), m, n) += as_mat(ctx.grad_out(), n, m).transpose();
  });
}

Var reshape(const Var& a, Shape shape) {
  require(shape_size(shape) == a.size(), "reshape",
          shape_string(a.shape()) + " -> " + shape_string(shape));
  return a.graph().apply(a.value().reshaped(std::move(shape)), {a}, [](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat0(std::span<const Var> parts) {
  require(!parts.empty(), "concat0", "no operands");
  const Var& first = parts.front();
  Shape tail(first.shape().begin() + 1, first.shape().end());
  std::size_t lead = 0;
  std::vector<Var> inputs;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_same_graph(first, p, "concat0");
    require(Shape(p.shape().begin() + 1, p.shape().end()) == tail, "concat0",
            "trailing extents differ: " + shape_string(p.shape()));
    lead += p.shape()[0];
    offsets.push_back(total);
    total += p.size();
    inputs.push_back(p);
  }
  Shape shape = first.shape();
  shape[0] = lead;
  DenseArray out(shape);
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i].value().data().begin(), parts[i].value().data().end(), out.raw() + offsets[i]);
  return first.graph().apply(std::move(out), std::move(inputs), [offsets](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (!ctx.needs(i)) continue;
      auto& gi = ctx.grad_in(i);
      for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[offsets[i] + j];
    }
  });
}

Var slice0(const Var& a, std::size_t begin, std::size_t end) {
  require(a.valid() && a.value().rank() >= 1 && begin < end && end <= a.shape()[0], "slice0",
          "bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_string(a.shape()));
  const std::size_t stride = a.size() / a.shape()[0];
  Shape shape = a.shape();
  shape[0] = end - begin;
  const std::size_t offset = begin * stride;
  DenseArray out(shape);
  std::copy_n(a.value().raw() + offset, out.size(), out.raw());
  return a.graph().apply(std::move(out), {a}, [offset](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& ga = ctx.grad_in(0);
    for (std::size_t j = 0; j < g.size(); ++j) ga[offset + j] += g[j];
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no operands");
  const std::size_t m = parts.front().shape()[0];
  std::vector<std::size_t> widths, starts;
  std::vector<Var> inputs;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require_same_graph(parts.front(), p, "concat_cols");
    require(p.shape()[0] == m, "concat_cols", "row counts differ");
    starts.push_back(n);
    widths.push_back(p.shape()[1]);
    n += p.shape()[1];
    inputs.push_back(p);
  }
  DenseArray out({m, n});
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < widths[i]; ++c) out[r * n + starts[i] + c] = parts[i].value()[r * widths[i] + c];
  return parts.front().graph().apply(std::move(out), std::move(inputs), [m, n, widths, starts](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (!ctx.needs(i)) continue;
      auto& gi = ctx.grad_in(i);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < widths[i]; ++c) gi[r * widths[i] + c] += g[r * n + starts[i] + c];
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  require(begin < end && end <= n, "slice_cols", "bad column range");
  const std::size_t w = end - begin;
  DenseArray out({m, w});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a.value()[r * n + begin + c];
  return a.graph().apply(std::move(out), {a}, [m, n, w, begin](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& ga = ctx.grad_in(0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> rows) {
  require_rank(table, 2, "gather_rows");
  require(!rows.empty(), "gather_rows", "no rows requested");
  const std::size_t n = table.shape()[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  DenseArray out({idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < table.shape()[0], "gather_rows", "row index out of range");
    std::copy_n(table.value().raw() + idx[r] * n, n, out.raw() + r * n);
  }
  return table.graph().apply(std::move(out), {table}, [idx, n](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& gt = ctx.grad_in(0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) gt[idx[r] * n + c] += g[r * n + c];
  });
}

Var l2_normalize(const Var& a) {
  double ss = 0.0;
  for (double v : a.value().data()) ss += v * v;
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0)) throw std::invalid_argument("l2_normalize: zero-norm input");
  DenseArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / norm;
  return a.graph().apply(std::move(out), {a}, [norm](BackwardContext& ctx) {
    // d(x/|x|) = (g - y (y.g)) / |x|
    const auto& g = ctx.grad_out();
    const auto& y = ctx.value_out();
    double yg = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) yg += y[i] * g[i];
    auto& ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (g[i] - y[i] * yg) / norm;
  });
}

// ---------------------------------------------------------------------------
// Network layers

Var softmax_rows(const Var& logits, std::span<const char> keep) {
  require_rank(logits, 2, "softmax_rows");
  const std::size_t m = logits.shape()[0], n = logits.shape()[1];
  require(keep.empty() || keep.size() == n, "softmax_rows", "mask length mismatch");
  std::vector<char> mask(keep.begin(), keep.end());
  const auto& x = logits.value();
  if (!x.all_finite()) throw std::invalid_argument("softmax_rows: non-finite logits");
  DenseArray out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (mask.empty() || mask[c]) mx = std::max(mx, x[r * n + c]);
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax_rows: every column masked");
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double e = (mask.empty() || mask[c]) ? std::exp(x[r * n + c] - mx) : 0.0;
      out[r * n + c] = e;
      s += e;
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= s;
  }
  return logits.graph().apply(std::move(out), {logits}, [m, n](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    const auto& y = ctx.value_out();
    auto& gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < m; ++r) {
      double yg = 0.0;
      for (std::size_t c = 0; c < n; ++c) yg += y[r * n + c] * g[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - yg);
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t patch() const { return cin * k * k; }
  std::size_t positions() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t np = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * np;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t np = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * np;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var* bias, std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_same_graph(x, weight, "conv2d");
  require(stride >= 1, "conv2d", "stride must be positive");
  ConvGeometry g{};
  g.cin = x.shape()[0];
  g.h = x.shape()[1];
  g.w = x.shape()[2];
  g.cout = weight.shape()[0];
  g.k = weight.shape()[2];
  g.stride = stride;
  g.pad = pad;
  require(weight.shape()[1] == g.cin && weight.shape()[3] == g.k, "conv2d",
          "weight " + shape_string(weight.shape()) + " incompatible with input " + shape_string(x.shape()));
  require(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k, "conv2d", "kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (bias) {
    require_same_graph(x, *bias, "conv2d");
    require(bias->size() == g.cout, "conv2d", "bias length mismatch");
  }

  auto col = std::make_shared<DenseArray>(Shape{g.patch(), g.positions()});
  im2col(x.value().raw(), g, col->raw());
  DenseArray out({g.cout, g.ho, g.wo});
  auto out_m = as_mat(out, g.cout, g.positions());
  out_m.noalias() = as_mat(weight.value(), g.cout, g.patch()) * as_mat(*col, g.patch(), g.positions());
  if (bias) {
    for (std::size_t c = 0; c < g.cout; ++c) out_m.row(static_cast<Eigen::Index>(c)).array() += bias->value()[c];
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  if (!x.graph().recording()) col.reset();
  return x.graph().apply(std::move(out), std::move(inputs), [g, col, has_bias](BackwardContext& ctx) {
    const auto go = as_mat(ctx.grad_out(), g.cout, g.positions());
    if (ctx.needs(1))
      as_mat(ctx.grad_in(1), g.cout, g.patch()).noalias() += go * as_mat(*col, g.patch(), g.positions()).transpose();
    if (has_bias && ctx.needs(2)) {
      auto& gb = ctx.grad_in(2);
      for (std::size_t c = 0; c < g.cout; ++c) gb[c] += go.row(static_cast<Eigen::Index>(c)).sum();
    }
    if (ctx.needs(0)) {
      DenseArray dcol({g.patch(), g.positions()});
      as_mat(dcol, g.patch(), g.positions()).noalias() =
          as_mat(ctx.input(1), g.cout, g.patch()).transpose() * go;
      col2im(dcol.raw(), g, ctx.grad_in(0).raw());
    }
  });
}

Var upsample2x(const Var& x) {
  require_rank(x, 3, "upsample2x");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  DenseArray out({c, 2 * h, 2 * w});
  const auto& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
  return x.graph().apply(std::move(out), {x}, [c, h, w](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& gx = ctx.grad_in(0);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
  });
}

Var pool_height(const Var& x) {
  require_rank(x, 3, "pool_height");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  DenseArray out({c, w});
  const auto& xv = x.value();
  const double inv = 1.0 / static_cast<double>(h);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[ch * w + xx] += xv[(ch * h + y) * w + xx] * inv;
  return x.graph().apply(std::move(out), {x}, [c, h, w, inv](BackwardContext& ctx) {
    const auto& g = ctx.grad_out();
    auto& gx = ctx.grad_in(0);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) gx[(ch * h + y) * w + xx] += g[ch * w + xx] * inv;
  });
}

}  // namespace markdiff::ad
