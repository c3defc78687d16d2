// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "markdiff/image.hpp"

namespace markdiff::markup {

// Micro-markup grammar:
//   expr  := item*
//   item  := atom | atom '^' group | atom '_' group | '\frac' group group
//   group := '{' expr '}'
//   atom  := [a-z] | [0-9] | '+' | '-' | '='
using Token = std::string;
using TokenSeq = std::vector<Token>;

inline constexpr std::size_t kMaxTokens = 48;
inline constexpr std::size_t kMinGeneratedTokens = 3;
inline constexpr int kMaxDepth = 2;

// Closed vocabulary: every token the grammar can produce.
const std::vector<Token>& vocabulary();
// Index into vocabulary(); throws std::out_of_range for unknown tokens.
std::size_t token_index(std::string_view token);

// Splits markup into tokens. Throws ParseError (with byte offset) on unknown
// characters or commands and on unbalanced braces.
TokenSeq tokenize(std::string_view text);
std::string detokenize(const TokenSeq& tokens);

struct Node {
  enum class Kind { Atom, Superscript, Subscript, Fraction };
  Kind kind = Kind::Atom;
  char symbol = 0;             // Atom, and the base of a script
  std::vector<Node> first;     // script body or numerator
  std::vector<Node> second;    // denominator
};

// Structural parse of a token sequence. Throws ParseError where the offset is
// the index of the offending token.
std::vector<Node> parse(const TokenSeq& tokens);
// Nesting depth of fractions and scripts (0 for flat expressions).
int depth(const std::vector<Node>& expr);

struct MarkupDoc {
  TokenSeq tokens;
  std::string source_text;
  std::uint64_t seed = 0;

  // Parses and validates: grammar, depth <= kMaxDepth, 1..kMaxTokens tokens.
  static MarkupDoc from_text(std::string_view text, std::uint64_t seed = 0);
  bool has_fraction() const;
  bool has_script() const;

  friend bool operator==(const MarkupDoc&, const MarkupDoc&) = default;
};

// Samples `count` distinct documents: 40% flat expressions, 30% with one
// fraction, 30% with one script.
std::vector<MarkupDoc> generate(std::uint64_t seed, std::size_t count);

inline constexpr std::size_t kImageHeight = 32;
inline constexpr std::size_t kImageWidth = 128;

struct RenderOptions {
  std::size_t height = kImageHeight;
  std::size_t width = kImageWidth;
  std::size_t left_margin = 2;
  int script_shift = 4;
};

// Deterministic binary raster of a document (ink = 1.0).
Image render(const MarkupDoc& doc, const RenderOptions& options = {});

// 5x7 glyph rows for a grammar atom; bit 4 is the leftmost column.
const std::array<std::uint8_t, 7>& glyph(char symbol);
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

}  // namespace markdiff::markup
