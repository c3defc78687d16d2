// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/ccam.hpp"

#include <cmath>
#include <vector>

namespace markdiff::ccam {

using ad::Var;

namespace {

void add_matrix(ParamSet& params, const std::string& name, std::size_t rows, std::size_t cols, std::uint64_t seed,
                double gain = 1.0) {
  params.add(name, init_normal({rows, cols}, gain / std::sqrt(static_cast<double>(rows)), seed, name));
}

Var attend(const Var& q, const Var& k, const Var& v, std::span<const char> keep, AttentionProbe* probe) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(k.shape()[1]));
  const Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_dk), keep);
  if (probe) probe->weights = weights;
  return ad::matmul(weights, v);
}

}  // namespace

void init_ccam_block(ParamSet& params, const std::string& prefix, const BlockDims& dims, std::uint64_t seed) {
  const std::size_t c = dims.visual, d = dims.markup, a = dims.attn;
  for (const char* w : {".sa.wq", ".sa.wk", ".sa.wv"}) add_matrix(params, prefix + w, c, a, seed);
  add_matrix(params, prefix + ".sa.wo", a, c, seed, 0.5);

  add_matrix(params, prefix + ".cha.wq", c, a, seed);
  add_matrix(params, prefix + ".cha.wk", d, a, seed);
  add_matrix(params, prefix + ".cha.wv", d, a, seed);

  add_matrix(params, prefix + ".coa.ctx", c, 1, seed);
  add_matrix(params, prefix + ".coa.tr1", c, c, seed);
  params.add(prefix + ".coa.tr1b", DenseArray({c}, 0.0));
  add_matrix(params, prefix + ".coa.tr2", c, c, seed);
  params.add(prefix + ".coa.tr2b", DenseArray({c}, 1.0));
  add_matrix(params, prefix + ".coa.psi", c, a, seed);
  add_matrix(params, prefix + ".coa.mk", d, c, seed);
  add_matrix(params, prefix + ".coa.wk", c, a, seed);
  add_matrix(params, prefix + ".coa.wv", c, a, seed);

  add_matrix(params, prefix + ".fuse.w", a, c, seed, 0.5);
  params.add(prefix + ".fuse.b", DenseArray({c}, 0.0));
}

void init_cross_attention(ParamSet& params, const std::string& prefix, const BlockDims& dims, std::uint64_t seed) {
  add_matrix(params, prefix + ".wq", dims.visual, dims.attn, seed);
  add_matrix(params, prefix + ".wk", dims.markup, dims.attn, seed);
  add_matrix(params, prefix + ".wv", dims.markup, dims.attn, seed);
  add_matrix(params, prefix + ".wo", dims.attn, dims.visual, seed, 0.5);
}

Var self_attention(const Bindings& p, const std::string& prefix, const Var& visual, AttentionProbe* probe) {
  const Var q = ad::matmul(visual, p[prefix + ".sa.wq"]);
  const Var k = ad::matmul(visual, p[prefix + ".sa.wk"]);
  const Var v = ad::matmul(visual, p[prefix + ".sa.wv"]);
  const Var attended = attend(q, k, v, {}, probe);
  return ad::add(visual, ad::matmul(attended, p[prefix + ".sa.wo"]));
}

Var character_attention(const Bindings& p, const std::string& prefix, const Var& visual, const Var& markup,
                        std::span<const char> keep, AttentionProbe* probe) {
  const Var q = ad::matmul(visual, p[prefix + ".cha.wq"]);
  const Var k = ad::matmul(markup, p[prefix + ".cha.wk"]);
  const Var v = ad::matmul(markup, p[prefix + ".cha.wv"]);
  return attend(q, k, v, keep, probe);
}

RelationOutput relation_queries(const Bindings& p, const std::string& prefix, const Var& visual) {
  RelationOutput out;
  const Var logits = ad::transpose(ad::matmul(visual, p[prefix + ".coa.ctx"]));  // (1, HW)
  out.context_weights = ad::softmax_rows(logits);
  const Var global = ad::matmul(out.context_weights, visual);  // (1, C)
  const Var hidden = ad::silu(ad::add_bias(ad::matmul(global, p[prefix + ".coa.tr1"]), p[prefix + ".coa.tr1b"]));
  const Var transform = ad::add_bias(ad::matmul(hidden, p[prefix + ".coa.tr2"]), p[prefix + ".coa.tr2b"]);
  out.relation = ad::mul_row(visual, transform);
  out.queries = ad::matmul(out.relation, p[prefix + ".coa.psi"]);
  return out;
}

Var context_attention(const Bindings& p, const std::string& prefix, const Var& queries, const Var& visual,
                      const Var& markup, std::span<const char> keep, AttentionProbe* probe) {
  const std::vector<Var> rows{visual, ad::matmul(markup, p[prefix + ".coa.mk"])};
  const Var memory = ad::concat0(rows);  // (HW + N, C)
  const Var k = ad::matmul(memory, p[prefix + ".coa.wk"]);
  const Var v = ad::matmul(memory, p[prefix + ".coa.wv"]);
  return attend(queries, k, v, keep, probe);
}

Var ccam_block(const Bindings& p, const std::string& prefix, const Var& visual, const Var& markup) {
  const Var v_sa = self_attention(p, prefix, visual);
  const Var cha = character_attention(p, prefix, v_sa, markup);
  const Var coa = context_attention(p, prefix, relation_queries(p, prefix, v_sa).queries, v_sa, markup);
  const Var fused = ad::add_bias(ad::matmul(ad::add(cha, coa), p[prefix + ".fuse.w"]), p[prefix + ".fuse.b"]);
  return ad::add(v_sa, fused);
}

Var cross_attention(const Bindings& p, const std::string& prefix, const Var& visual, const Var& markup,
                    AttentionProbe* probe) {
  const Var q = ad::matmul(visual, p[prefix + ".wq"]);
  const Var k = ad::matmul(markup, p[prefix + ".wk"]);
  const Var v = ad::matmul(markup, p[prefix + ".wv"]);
  return ad::add(visual, ad::matmul(attend(q, k, v, {}, probe), p[prefix + ".wo"]));
}

}  // namespace markdiff::ccam
