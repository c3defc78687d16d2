// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "markdiff/dense_array.hpp"

namespace markdiff {

// Interleaved row-major image with pixel values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
  std::size_t size() const noexcept { return pixels.size(); }
  bool same_shape(const Image& o) const noexcept {
    return height == o.height && width == o.width && channels == o.channels;
  }
  // Sum of pixel values.
  double ink() const;

  friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel image <-> (H, W) array.
DenseArray to_array(const Image& img);
Image from_array(const DenseArray& a);

// Binary PGM (P5, maxval 255); values are scaled by 255 and rounded.
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);
// 8-bit grayscale PNG (other PNG colour types are converted to gray).
Image read_png(const std::filesystem::path& path);
// Dispatches on the file signature.
Image read_image(const std::filesystem::path& path);

}  // namespace markdiff
