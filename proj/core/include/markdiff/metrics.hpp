// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "markdiff/image.hpp"

namespace markdiff::metrics {

// Binary column vectors, left to right; each has `height` entries.
struct ColumnSeries {
  std::size_t height = 0;
  std::vector<std::vector<unsigned char>> columns;

  std::size_t length() const noexcept { return columns.size(); }
};

ColumnSeries binarize(const Image& img, double threshold = 0.5);

// Unnormalized DTW with unit steps and Euclidean column cost.
double dtw(const ColumnSeries& a, const ColumnSeries& b);
// Same dynamic program over real-valued column vectors.
double dtw(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

// Pixel metrics on the [0, 255] scale. The first argument of ergas and rase
// is the reference.
double rmse(const Image& a, const Image& b);
double ssim(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);
double ergas(const Image& reference, const Image& b);
double rase(const Image& reference, const Image& b);

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kSsimWindow = 8;
inline constexpr std::size_t kSsimStride = 4;

struct MetricRow {
  std::string filename;
  double dtw = 0.0, rmse = 0.0, ssim = 0.0, psnr = 0.0, ergas = 0.0, rase = 0.0;
};

// All six metrics; `truth` is the reference.
MetricRow compare(const Image& generated, const Image& truth, std::string filename = {});

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow means;
  std::vector<std::string> unmatched;
};

// Pairs image files (.pgm, .png) by name. Unmatched names are an IoError
// unless allow_partial is set.
MetricReport evaluate_set(const std::filesystem::path& generated_dir, const std::filesystem::path& truth_dir,
                          bool allow_partial = false);

// Header, one row per pair, then a "mean" row.
std::string to_csv(const MetricReport& report);

}  // namespace markdiff::metrics
