// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "markdiff/corpus.hpp"
#include "markdiff/errors.hpp"
#include "markdiff/metrics.hpp"
#include "markdiff/rng.hpp"
#include "test_util.hpp"

namespace markdiff::metrics {
namespace {

Image constant(std::size_t h, std::size_t w, double v) { return Image(h, w, 1, v); }

Image random_binary(std::size_t h, std::size_t w, RngStream& rng) {
  Image img(h, w);
  for (double& v : img.pixels) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return img;
}

double column_cost(const std::vector<unsigned char>& a, const std::vector<unsigned char>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

// Minimum over every monotone path from (0, 0) to (n-1, m-1) with unit steps.
void enumerate(const ColumnSeries& a, const ColumnSeries& b, std::size_t i, std::size_t j, double acc, double& best) {
  acc += column_cost(a.columns[i], b.columns[j]);
  if (i + 1 == a.length() && j + 1 == b.length()) {
    best = std::min(best, acc);
    return;
  }
  if (i + 1 < a.length()) enumerate(a, b, i + 1, j, acc, best);
  if (j + 1 < b.length()) enumerate(a, b, i, j + 1, acc, best);
  if (i + 1 < a.length() && j + 1 < b.length()) enumerate(a, b, i + 1, j + 1, acc, best);
}

double brute_force_dtw(const ColumnSeries& a, const ColumnSeries& b) {
  double best = std::numeric_limits<double>::infinity();
  enumerate(a, b, 0, 0, 0.0, best);
  return best;
}

TEST(Binarize, ThresholdConvention) {
  for (const auto& c : binarize(constant(3, 4, 0.4)).columns)
    for (auto v : c) EXPECT_EQ(v, 0);
  const auto ones = binarize(constant(3, 4, 0.5));
  EXPECT_EQ(ones.length(), 4u);
  EXPECT_EQ(ones.height, 3u);
  for (const auto& c : ones.columns)
    for (auto v : c) EXPECT_EQ(v, 1);
}

TEST(Binarize, ColumnsLeftToRightAndIdempotent) {
  Image img(2, 3);
  img.at(1, 2) = 0.9;
  const auto s = binarize(img);
  EXPECT_EQ(s.columns[2], (std::vector<unsigned char>{0, 1}));
  EXPECT_EQ(s.columns[0], (std::vector<unsigned char>{0, 0}));
  Image back(2, 3);
  for (std::size_t x = 0; x < 3; ++x)
    for (std::size_t y = 0; y < 2; ++y) back.at(y, x) = s.columns[x][y];
  EXPECT_EQ(binarize(back).columns, s.columns);
}

TEST(Dtw, HandValues) {
  ColumnSeries a{1, {{0}}}, b{1, {{1}}};
  EXPECT_EQ(dtw(a, b), 1.0);
  EXPECT_EQ(dtw(a, a), 0.0);
  EXPECT_EQ(dtw(std::vector<std::vector<double>>{{1}, {2}, {3}}, std::vector<std::vector<double>>{{1}, {3}}), 1.0);
  EXPECT_THROW(dtw(ColumnSeries{1, {}}, b), std::invalid_argument);
  EXPECT_THROW(dtw(ColumnSeries{2, {{0, 1}}}, b), std::invalid_argument);
}

TEST(Dtw, MatchesBruteForceEnumeration) {
  RngStream rng(41, "dtw");
  for (int k = 0; k < 200; ++k) {
    const std::size_t h = 1 + rng.below(4), n = 1 + rng.below(6), m = 1 + rng.below(6);
    const auto a = binarize(random_binary(h, n, rng)), b = binarize(random_binary(h, m, rng));
    EXPECT_EQ(dtw(a, b), brute_force_dtw(a, b));
    EXPECT_EQ(dtw(a, b), dtw(b, a));
    EXPECT_EQ(dtw(a, a), 0.0);
  }
}

TEST(Rmse, HandValues) {
  EXPECT_EQ(rmse(constant(4, 4, 0.3), constant(4, 4, 0.3)), 0.0);
  EXPECT_NEAR(rmse(constant(4, 4, 0.0), constant(4, 4, 1.0)), 255.0, 1e-12);
  Image half(4, 4);
  for (std::size_t i = 0; i < 8; ++i) half.pixels[i] = 1.0;
  EXPECT_NEAR(rmse(half, constant(4, 4, 0.0)), 255.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(255.0 / std::sqrt(2.0), 180.31, 5e-3);
  EXPECT_THROW(rmse(constant(4, 4, 0), constant(4, 5, 0)), std::invalid_argument);
}

TEST(Psnr, HandValues) {
  EXPECT_EQ(psnr(constant(4, 4, 0.2), constant(4, 4, 0.2)), kPsnrCap);
  EXPECT_NEAR(psnr(constant(4, 4, 0.0), constant(4, 4, 1.0)), 0.0, 1e-12);
  EXPECT_NEAR(psnr(constant(4, 4, 0.3), constant(4, 4, 0.4)), 20.0, 1e-9);
}

TEST(Ssim, IdentitySymmetryAndNegation) {
  RngStream rng(42, "ssim");
  const Image a = random_binary(16, 16, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  Image neg = a;
  for (double& v : neg.pixels) v = 1.0 - v;
  EXPECT_LT(ssim(a, neg), 0.0);
  const Image b = random_binary(16, 16, rng);
  EXPECT_EQ(ssim(a, b), ssim(b, a));
  const double flat = ssim(constant(16, 16, 0.0), constant(16, 16, 0.0));
  EXPECT_TRUE(std::isfinite(flat));
  EXPECT_NEAR(flat, 1.0, 1e-12);
  EXPECT_GE(ssim(a, b), -1.0);
  EXPECT_LE(ssim(a, b), 1.0);
}

TEST(Ssim, WindowedMeanOverHandComputedWindows) {
  // 8x12 images have two 8x8 windows at stride 4 (x = 0 and x = 4).
  RngStream rng(43, "ssim");
  Image a(8, 12), b(8, 12);
  for (double& v : a.pixels) v = rng.uniform();
  for (double& v : b.pixels) v = rng.uniform();
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double total = 0.0;
  for (std::size_t x0 : {0u, 4u}) {
    double ma = 0, mb = 0;
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = x0; x < x0 + 8; ++x) {
        ma += 255 * a.at(y, x) / 64;
        mb += 255 * b.at(y, x) / 64;
      }
    double va = 0, vb = 0, cov = 0;
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = x0; x < x0 + 8; ++x) {
        const double da = 255 * a.at(y, x) - ma, db = 255 * b.at(y, x) - mb;
        va += da * da / 64;
        vb += db * db / 64;
        cov += da * db / 64;
      }
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  EXPECT_NEAR(ssim(a, b), total / 2, 1e-9);
}

TEST(ErgasRase, HandValues) {
  const Image ref = constant(4, 4, 100.0 / 255.0), shifted = constant(4, 4, 110.0 / 255.0);
  EXPECT_NEAR(rase(ref, shifted), 10.0, 1e-9);
  EXPECT_NEAR(ergas(ref, shifted), 100.0 * rmse(ref, shifted) / 100.0, 1e-9);
  EXPECT_EQ(ergas(ref, ref), 0.0);
  EXPECT_EQ(rase(ref, ref), 0.0);
  EXPECT_THROW(rase(constant(4, 4, 0.0), ref), std::invalid_argument);
  EXPECT_THROW(ergas(constant(4, 4, 0.0), ref), std::invalid_argument);
}

TEST(Identities, CorpusImages) {
  const Corpus c = build_corpus(11, 50);
  for (const auto& img : c.images) {
    const auto r = compare(img, img);
    EXPECT_EQ(r.dtw, 0.0);
    EXPECT_EQ(r.rmse, 0.0);
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
    EXPECT_EQ(r.psnr, kPsnrCap);
    EXPECT_EQ(r.ergas, 0.0);
    EXPECT_EQ(r.rase, 0.0);
  }
  const auto d = compare(c.images[0], c.images[1]);
  EXPECT_GT(d.dtw, 0.0);
  EXPECT_GT(d.rmse, 0.0);
  EXPECT_GT(d.ergas, 0.0);
  EXPECT_GT(d.rase, 0.0);
}

constexpr unsigned char kPng3x2[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x03, 0x00, 0x00, 0x00, 0x02, 0x08, 0x00, 0x00, 0x00, 0x00, 0xb8, 0x1f, 0x39, 0xc6, 0x00, 0x00, 0x00, 0x10, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0x68, 0xf8, 0xcf, 0xf0, 0x9f, 0xc1, 0x01, 0x00, 0x0b, 0x40, 0x02, 0xbf,
    0x8c, 0xe2, 0x9d, 0x78, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

TEST(ImageIo, ReadsGrayscalePng) {
  const auto dir = testing::scratch_dir("png");
  std::ofstream(dir / "x.png", std::ios::binary).write(reinterpret_cast<const char*>(kPng3x2), sizeof kPng3x2);
  const Image img = read_image(dir / "x.png");
  ASSERT_EQ(img.height, 2u);
  ASSERT_EQ(img.width, 3u);
  const double expected[] = {0, 128, 255, 255, 0, 64};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(img.pixels[i], expected[i] / 255.0, 1e-15);
  std::ofstream(dir / "bad.png", std::ios::binary) << "\x89PNG garbage";
  EXPECT_THROW(read_image(dir / "bad.png"), IoError);
}

TEST(EvaluateSet, PairsByNameAndReports) {
  const auto root = testing::scratch_dir("evalset");
  const auto gen = root / "gen", truth = root / "truth";
  std::filesystem::create_directories(gen);
  std::filesystem::create_directories(truth);
  const Corpus c = build_corpus(12, 3);
  for (std::size_t i = 0; i < 3; ++i) write_pgm(truth / ("d" + std::to_string(i) + ".pgm"), c.images[i]);
  write_pgm(gen / "d0.pgm", c.images[0]);
  write_pgm(gen / "d1.pgm", c.images[2]);

  EXPECT_THROW(evaluate_set(gen, truth), IoError);
  const auto report = evaluate_set(gen, truth, true);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.unmatched, (std::vector<std::string>{"d2.pgm"}));
  EXPECT_EQ(report.rows[0].filename, "d0.pgm");
  EXPECT_EQ(report.rows[0].dtw, 0.0);
  const auto d1 = compare(c.images[2], c.images[1]);
  EXPECT_EQ(report.rows[1].dtw, d1.dtw);
  EXPECT_NEAR(report.means.dtw, d1.dtw / 2, 1e-12);
  EXPECT_NEAR(report.means.psnr, (kPsnrCap + d1.psnr) / 2, 1e-12);

  const std::string csv = to_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "filename,dtw,rmse,ssim,psnr,ergas,rase");
  EXPECT_NE(csv.find("\nd1.pgm,"), std::string::npos);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
  EXPECT_THROW(evaluate_set(root / "missing", truth), IoError);
}

}  // namespace
}  // namespace markdiff::metrics
