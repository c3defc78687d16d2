// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/corpus.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "markdiff/errors.hpp"

namespace markdiff {

Corpus build_corpus(std::uint64_t seed, std::size_t count, const markup::RenderOptions& options) {
  Corpus c;
  c.docs = markup::generate(seed, count);
  c.images.reserve(c.docs.size());
  for (const auto& d : c.docs) c.images.push_back(markup::render(d, options));
  return c;
}

std::string image_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.pgm", index);
  return buf;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::ofstream out(dir / "corpus.jsonl", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "corpus.jsonl").string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    nlohmann::ordered_json rec;
    rec["seed"] = corpus.docs[i].seed;
    rec["source_text"] = corpus.docs[i].source_text;
    out << rec.dump() << '\n';
    write_pgm(dir / "images" / image_filename(i), corpus.images[i]);
  }
  if (!out) throw IoError("write failed for " + (dir / "corpus.jsonl").string());
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "corpus.jsonl");
  if (!in) throw IoError("cannot open " + (dir / "corpus.jsonl").string());
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("source_text") || !rec["source_text"].is_string() ||
        !rec.contains("seed") || !rec["seed"].is_number_unsigned())
      throw IoError("corpus.jsonl line " + std::to_string(lineno) + " is not a valid record");
    c.docs.push_back(markup::MarkupDoc::from_text(rec["source_text"].get<std::string>(), rec["seed"].get<std::uint64_t>()));
    c.images.push_back(read_image(dir / "images" / image_filename(c.docs.size() - 1)));
  }
  if (c.docs.empty()) throw IoError("corpus at " + dir.string() + " is empty");
  return c;
}

}  // namespace markdiff
