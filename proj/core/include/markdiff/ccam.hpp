// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "markdiff/autodiff.hpp"
#include "markdiff/params.hpp"

namespace markdiff::ccam {

// Widths of one attention block: visual channels C, markup width D and the
// shared query/key/value width d (d_q = d_k = d_v).
struct BlockDims {
  std::size_t visual = 32;
  std::size_t markup = 64;
  std::size_t attn = 64;
};

void init_ccam_block(ParamSet& params, const std::string& prefix, const BlockDims& dims, std::uint64_t seed);
void init_cross_attention(ParamSet& params, const std::string& prefix, const BlockDims& dims, std::uint64_t seed);

// Optional probe for the attention distribution of a layer.
struct AttentionProbe {
  ad::Var weights;
};

// (HW, C) -> (HW, C): single-head scaled dot-product self-attention, output
// projection back to C, residual added.
ad::Var self_attention(const Bindings& p, const std::string& prefix, const ad::Var& visual,
                       AttentionProbe* probe = nullptr);

// Character-aware attention: queries from the HW visual positions, keys and
// values from the N markup tokens. Returns (HW, d). `keep` masks tokens.
ad::Var character_attention(const Bindings& p, const std::string& prefix, const ad::Var& visual,
                            const ad::Var& markup, std::span<const char> keep = {},
                            AttentionProbe* probe = nullptr);

struct RelationOutput {
  ad::Var context_weights;  // (1, HW) softmax pooling weights
  ad::Var relation;         // (HW, C): v_i * transform(g)
  ad::Var queries;          // (HW, d)
};

// Global-context relation matrix and its query projection.
RelationOutput relation_queries(const Bindings& p, const std::string& prefix, const ad::Var& visual);

// Context-aware attention over the (HW + N) rows of [visual; projected markup].
// `keep` has one flag per key row, visual rows first.
ad::Var context_attention(const Bindings& p, const std::string& prefix, const ad::Var& queries,
                          const ad::Var& visual, const ad::Var& markup, std::span<const char> keep = {},
                          AttentionProbe* probe = nullptr);

// SA -> (ChA + CoA) -> fusion -> residual onto the SA output. Shape preserved.
ad::Var ccam_block(const Bindings& p, const std::string& prefix, const ad::Var& visual, const ad::Var& markup);

// Conventional cross attention (visual queries, markup keys/values) with
// output projection and residual. Shape preserved.
ad::Var cross_attention(const Bindings& p, const std::string& prefix, const ad::Var& visual,
                        const ad::Var& markup, AttentionProbe* probe = nullptr);

}  // namespace markdiff::ccam
