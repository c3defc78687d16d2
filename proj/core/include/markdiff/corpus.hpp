// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "markdiff/image.hpp"
#include "markdiff/markup.hpp"

namespace markdiff {

struct Corpus {
  std::vector<markup::MarkupDoc> docs;
  std::vector<Image> images;

  std::size_t size() const noexcept { return docs.size(); }
};

// Generated documents with their rasters.
Corpus build_corpus(std::uint64_t seed, std::size_t count, const markup::RenderOptions& options = {});

// NNNNNN.pgm for index i.
std::string image_filename(std::size_t index);

// <dir>/corpus.jsonl with {"seed", "source_text"} per line and
// <dir>/images/NNNNNN.pgm.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
// Throws IoError on missing files, ParseError on invalid markup.
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace markdiff
