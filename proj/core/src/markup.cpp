// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/markup.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "markdiff/errors.hpp"
#include "markdiff/rng.hpp"

namespace markdiff::markup {
namespace {

bool is_atom(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' || c == '-' || c == '=';
}

bool is_atom_token(const Token& t) { return t.size() == 1 && is_atom(t[0]); }

}  // namespace

const std::vector<Token>& vocabulary() {
  static const std::vector<Token> vocab = [] {
    std::vector<Token> v;
    for (char c = 'a'; c <= 'z'; ++c) v.emplace_back(1, c);
    for (char c = '0'; c <= '9'; ++c) v.emplace_back(1, c);
    for (const char* s : {"+", "-", "=", "^", "_", "{", "}", "\\frac"}) v.emplace_back(s);
    return v;
  }();
  return vocab;
}

std::size_t token_index(std::string_view token) {
  static const std::unordered_map<std::string, std::size_t> index = [] {
    std::unordered_map<std::string, std::size_t> m;
    const auto& v = vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(v[i], i);
    return m;
  }();
  auto it = index.find(std::string(token));
  if (it == index.end()) throw std::out_of_range("token '" + std::string(token) + "' is not in the vocabulary");
  return it->second;
}

TokenSeq tokenize(std::string_view text) {
  TokenSeq tokens;
  std::vector<std::size_t> open;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\\') {
      std::size_t j = i + 1;
      while (j < text.size() && text[j] >= 'a' && text[j] <= 'z') ++j;
      const std::string_view name = text.substr(i, j - i);
      if (name != "\\frac") throw ParseError("unknown command '" + std::string(name) + "'", i);
      tokens.emplace_back(name);
      i = j;
      continue;
    }
    if (c == '{') {
      open.push_back(i);
    } else if (c == '}') {
      if (open.empty()) throw ParseError("unmatched '}'", i);
      open.pop_back();
    } else if (!is_atom(c) && c != '^' && c != '_') {
      throw ParseError(std::string("unexpected character '") + c + "'", i);
    }
    tokens.emplace_back(1, c);
    ++i;
  }
  if (!open.empty()) throw ParseError("unbalanced '{' opened at offset " + std::to_string(open.back()), text.size());
  return tokens;
}

std::string detokenize(const TokenSeq& tokens) {
  std::string s;
  for (const auto& t : tokens) s += t;
  return s;
}

namespace {

class Parser {
 public:
  explicit Parser(const TokenSeq& tokens) : tokens_(tokens) {}

  std::vector<Node> parse_all() {
    auto expr = parse_expr();
    if (pos_ != tokens_.size()) throw ParseError("unexpected '" + tokens_[pos_] + "'", pos_);
    return expr;
  }

 private:
  std::vector<Node> parse_expr() {
    std::vector<Node> items;
    while (pos_ < tokens_.size() && tokens_[pos_] != "}") items.push_back(parse_item());
    return items;
  }

  std::vector<Node> parse_group() {
    if (pos_ >= tokens_.size() || tokens_[pos_] != "{") throw ParseError("expected '{'", pos_);
    ++pos_;
    auto body = parse_expr();
    if (pos_ >= tokens_.size()) throw ParseError("expected '}'", pos_);
    ++pos_;
    return body;
  }

  Node parse_item() {
    const Token& t = tokens_[pos_];
    Node node;
    if (t == "\\frac") {
      ++pos_;
      node.kind = Node::Kind::Fraction;
      node.first = parse_group();
      node.second = parse_group();
      return node;
    }
    if (!is_atom_token(t)) throw ParseError("unexpected '" + t + "'", pos_);
    node.symbol = t[0];
    ++pos_;
    if (pos_ < tokens_.size() && (tokens_[pos_] == "^" || tokens_[pos_] == "_")) {
      node.kind = tokens_[pos_] == "^" ? Node::Kind::Superscript : Node::Kind::Subscript;
      ++pos_;
      node.first = parse_group();
    }
    return node;
  }

  const TokenSeq& tokens_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<Node> parse(const TokenSeq& tokens) { return Parser(tokens).parse_all(); }

int depth(const std::vector<Node>& expr) {
  int d = 0;
  for (const auto& n : expr) {
    if (n.kind == Node::Kind::Atom) continue;
    d = std::max(d, 1 + std::max(depth(n.first), depth(n.second)));
  }
  return d;
}

MarkupDoc MarkupDoc::from_text(std::string_view text, std::uint64_t seed) {
  MarkupDoc doc;
  doc.tokens = tokenize(text);
  if (doc.tokens.empty()) throw ParseError("empty markup", 0);
  if (doc.tokens.size() > kMaxTokens)
    throw ParseError("markup has " + std::to_string(doc.tokens.size()) + " tokens, limit is " +
                         std::to_string(kMaxTokens),
                     text.size());
  const auto tree = parse(doc.tokens);
  if (depth(tree) > kMaxDepth) throw ParseError("nesting deeper than " + std::to_string(kMaxDepth), 0);
  doc.source_text = std::string(text);
  doc.seed = seed;
  return doc;
}

bool MarkupDoc::has_fraction() const { return std::find(tokens.begin(), tokens.end(), "\\frac") != tokens.end(); }

bool MarkupDoc::has_script() const {
  return std::any_of(tokens.begin(), tokens.end(), [](const Token& t) { return t == "^" || t == "_"; });
}

// ---------------------------------------------------------------------------
// Corpus generation

namespace {

constexpr char kOps[] = {'+', '-', '='};

std::string operand(RngStream& rng) {
  std::string s;
  const int len = rng.uniform_int(1, 2);
  for (int i = 0; i < len; ++i) {
    if (rng.bernoulli(0.7))
      s.push_back(static_cast<char>('a' + rng.below(26)));
    else
      s.push_back(static_cast<char>('0' + rng.below(10)));
  }
  return s;
}

char op(RngStream& rng) { return kOps[rng.below(3)]; }

std::string flat(RngStream& rng, int min_operands, int max_operands) {
  const int k = rng.uniform_int(min_operands, max_operands);
  std::string s = operand(rng);
  for (int i = 1; i < k; ++i) {
    s.push_back(op(rng));
    s += operand(rng);
  }
  return s;
}

std::string script_body(RngStream& rng, bool allow_nested) {
  std::string body = flat(rng, 1, 2);
  if (allow_nested && rng.bernoulli(0.2)) {
    body.push_back(static_cast<char>('a' + rng.below(26)));
    body += rng.bernoulli(0.5) ? "^{" : "_{";
    body += operand(rng);
    body += "}";
  }
  return body;
}

std::string scripted_atom(RngStream& rng, bool allow_nested) {
  std::string s(1, static_cast<char>(rng.bernoulli(0.7) ? 'a' + rng.below(26) : '0' + rng.below(10)));
  s += rng.bernoulli(0.5) ? "^{" : "_{";
  s += script_body(rng, allow_nested);
  s += "}";
  return s;
}

std::string sample_text(RngStream& rng) {
  const double u = rng.uniform();
  if (u < 0.4) return flat(rng, 2, 5);

  std::string s;
  if (rng.bernoulli(0.5)) {
    s += operand(rng);
    s.push_back(op(rng));
  }
  if (u < 0.7) {
    std::string num = flat(rng, 1, 2);
    if (rng.bernoulli(0.25)) {
      num.push_back(op(rng));
      num += scripted_atom(rng, false);
    }
    s += "\\frac{" + num + "}{" + flat(rng, 1, 2) + "}";
  } else {
    s += scripted_atom(rng, true);
  }
  if (rng.bernoulli(0.5)) {
    s.push_back(op(rng));
    s += operand(rng);
  }
  return s;
}

}  // namespace

std::vector<MarkupDoc> generate(std::uint64_t seed, std::size_t count) {
  if (count == 0) throw std::invalid_argument("generate: count must be at least 1");
  std::vector<MarkupDoc> docs;
  docs.reserve(count);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::runtime_error("generate: could not find a unique document");
      RngStream rng(seed, "corpus.doc", i, attempt);
      const std::string text = sample_text(rng);
      if (seen.contains(text)) continue;
      MarkupDoc doc = MarkupDoc::from_text(text, rng.key());
      if (doc.tokens.size() < kMinGeneratedTokens) continue;
      seen.insert(text);
      docs.push_back(std::move(doc));
      break;
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

constexpr int kAdvance = kGlyphWidth + 1;
constexpr int kFractionShift = 5;

int layout_width(const std::vector<Node>& expr);

int fraction_span(const Node& n) { return std::max(layout_width(n.first), layout_width(n.second)) + 1; }

int layout_width(const Node& n) {
  switch (n.kind) {
    case Node::Kind::Atom:
      return kAdvance;
    case Node::Kind::Superscript:
    case Node::Kind::Subscript:
      return kAdvance + layout_width(n.first);
    case Node::Kind::Fraction:
      return fraction_span(n) + 1;
  }
  return 0;
}

int layout_width(const std::vector<Node>& expr) {
  int w = 0;
  for (const auto& n : expr) w += layout_width(n);
  return w;
}

class Rasterizer {
 public:
  Rasterizer(Image& img, const RenderOptions& opt) : img_(img), opt_(opt), center_(static_cast<int>(opt.height / 2)) {}

  int draw(const std::vector<Node>& expr, int x, int yoff) {
    for (const auto& n : expr) x = draw(n, x, yoff);
    return x;
  }

 private:
  void plot(int x, int y) {
    if (x < 0 || y < 0 || x >= static_cast<int>(img_.width) || y >= static_cast<int>(img_.height)) return;
    img_.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.0;
  }

  void draw_glyph(char symbol, int x, int yoff) {
    const auto& rows = glyph(symbol);
    const int top = center_ - kGlyphHeight / 2 + yoff;
    for (int r = 0; r < kGlyphHeight; ++r)
      for (int c = 0; c < kGlyphWidth; ++c)
        if (rows[static_cast<std::size_t>(r)] & (1u << (kGlyphWidth - 1 - c))) plot(x + c, top + r);
  }

  int draw(const Node& n, int x, int yoff) {
    switch (n.kind) {
      case Node::Kind::Atom:
        draw_glyph(n.symbol, x, yoff);
        return x + kAdvance;
      case Node::Kind::Superscript:
      case Node::Kind::Subscript: {
        draw_glyph(n.symbol, x, yoff);
        const int shift = n.kind == Node::Kind::Superscript ? -opt_.script_shift : opt_.script_shift;
        return draw(n.first, x + kAdvance, yoff + shift);
      }
      case Node::Kind::Fraction: {
        const int span = fraction_span(n);
        const int wn = layout_width(n.first);
        const int wd = layout_width(n.second);
        // Ink of an expression is its layout width minus the trailing gap.
        draw(n.first, x + (span - (wn - 1)) / 2, yoff - kFractionShift);
        draw(n.second, x + (span - (wd - 1)) / 2, yoff + kFractionShift);
        for (int c = 0; c < span; ++c) plot(x + c, center_ + yoff);
        return x + span + 1;
      }
    }
    return x;
  }

  Image& img_;
  const RenderOptions& opt_;
  int center_;
};

}  // namespace

Image render(const MarkupDoc& doc, const RenderOptions& options) {
  Image img(options.height, options.width);
  Rasterizer(img, options).draw(parse(doc.tokens), static_cast<int>(options.left_margin), 0);
  return img;
}

}  // namespace markdiff::markup
