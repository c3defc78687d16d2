// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "markdiff/errors.hpp"

namespace markdiff::metrics {
namespace {

constexpr double kScale = 255.0;

void require_same_shape(const Image& a, const Image& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                std::to_string(b.channels) + ")");
  if (a.pixels.empty()) throw std::invalid_argument(std::string(op) + ": empty image");
}

template <typename Cost>
double dtw_table(std::size_t n, std::size_t m, Cost cost) {
  if (n == 0 || m == 0) throw std::invalid_argument("dtw: empty series");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = cost(i - 1, j - 1) + std::min({prev[j - 1], prev[j], cur[j - 1]});
    std::swap(prev, cur);
  }
  return prev[m];
}

// Per-band mean squared error on the [0, 255] scale and reference band means.
void band_stats(const Image& ref, const Image& b, std::vector<double>& mse, std::vector<double>& mean) {
  const std::size_t c = ref.channels;
  mse.assign(c, 0.0);
  mean.assign(c, 0.0);
  const std::size_t n = ref.height * ref.width;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = kScale * (ref.pixels[i * c + k] - b.pixels[i * c + k]);
      mse[k] += d * d;
      mean[k] += kScale * ref.pixels[i * c + k];
    }
  for (std::size_t k = 0; k < c; ++k) {
    mse[k] /= static_cast<double>(n);
    mean[k] /= static_cast<double>(n);
  }
}

}  // namespace

ColumnSeries binarize(const Image& img, double threshold) {
  if (img.channels != 1) throw std::invalid_argument("binarize: expected a single-channel image");
  ColumnSeries s;
  s.height = img.height;
  s.columns.assign(img.width, std::vector<unsigned char>(img.height, 0));
  for (std::size_t x = 0; x < img.width; ++x)
    for (std::size_t y = 0; y < img.height; ++y) s.columns[x][y] = img.at(y, x) >= threshold ? 1 : 0;
  return s;
}

double dtw(const ColumnSeries& a, const ColumnSeries& b) {
  if (a.height != b.height) throw std::invalid_argument("dtw: column heights differ");
  return dtw_table(a.length(), b.length(), [&](std::size_t i, std::size_t j) {
    std::size_t diff = 0;
    const auto& ca = a.columns[i];
    const auto& cb = b.columns[j];
    for (std::size_t k = 0; k < a.height; ++k) diff += ca[k] != cb[k];
    return std::sqrt(static_cast<double>(diff));
  });
}

double dtw(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  return dtw_table(a.size(), b.size(), [&](std::size_t i, std::size_t j) {
    if (a[i].size() != b[j].size()) throw std::invalid_argument("dtw: column heights differ");
    double s = 0.0;
    for (std::size_t k = 0; k < a[i].size(); ++k) s += (a[i][k] - b[j][k]) * (a[i][k] - b[j][k]);
    return std::sqrt(s);
  });
}

double rmse(const Image& a, const Image& b) {
  require_same_shape(a, b, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = kScale * (a.pixels[i] - b.pixels[i]);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.pixels.size()));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  const double c1 = (0.01 * kScale) * (0.01 * kScale);
  const double c2 = (0.03 * kScale) * (0.03 * kScale);
  const std::size_t wh = std::min(kSsimWindow, a.height), ww = std::min(kSsimWindow, a.width);
  const double n = static_cast<double>(wh * ww);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t c = 0; c < a.channels; ++c)
    for (std::size_t y0 = 0; y0 + wh <= a.height; y0 += kSsimStride)
      for (std::size_t x0 = 0; x0 + ww <= a.width; x0 += kSsimStride) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t y = y0; y < y0 + wh; ++y)
          for (std::size_t x = x0; x < x0 + ww; ++x) {
            const double va = kScale * a.at(y, x, c), vb = kScale * b.at(y, x, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
  return total / static_cast<double>(windows);
}

double psnr(const Image& a, const Image& b) {
  const double e = rmse(a, b);
  if (e == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(kScale / e));
}

double ergas(const Image& reference, const Image& b) {
  require_same_shape(reference, b, "ergas");
  std::vector<double> mse, mean;
  band_stats(reference, b, mse, mean);
  double s = 0.0;
  for (std::size_t k = 0; k < mse.size(); ++k) {
    if (mean[k] == 0.0) throw std::invalid_argument("ergas: reference band mean is zero");
    s += mse[k] / (mean[k] * mean[k]);
  }
  return 100.0 * std::sqrt(s / static_cast<double>(mse.size()));
}

double rase(const Image& reference, const Image& b) {
  require_same_shape(reference, b, "rase");
  std::vector<double> mse, mean;
  band_stats(reference, b, mse, mean);
  double mu = 0.0, s = 0.0;
  for (std::size_t k = 0; k < mse.size(); ++k) {
    mu += mean[k];
    s += mse[k];
  }
  const double bands = static_cast<double>(mse.size());
  mu /= bands;
  if (mu == 0.0) throw std::invalid_argument("rase: reference mean is zero");
  return 100.0 / mu * std::sqrt(s / bands);
}

MetricRow compare(const Image& generated, const Image& truth, std::string filename) {
  MetricRow r;
  r.filename = std::move(filename);
  r.dtw = dtw(binarize(generated), binarize(truth));
  r.rmse = rmse(generated, truth);
  r.ssim = ssim(generated, truth);
  r.psnr = psnr(generated, truth);
  r.ergas = ergas(truth, generated);
  r.rase = rase(truth, generated);
  return r;
}

namespace {

std::map<std::string, std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".png") out.emplace(entry.path().filename().string(), entry.path());
  }
  return out;
}

}  // namespace

MetricReport evaluate_set(const std::filesystem::path& generated_dir, const std::filesystem::path& truth_dir,
                          bool allow_partial) {
  const auto generated = list_images(generated_dir);
  const auto truth = list_images(truth_dir);
  MetricReport report;
  for (const auto& [name, path] : generated) {
    auto it = truth.find(name);
    if (it == truth.end()) {
      report.unmatched.push_back(name);
      continue;
    }
    report.rows.push_back(compare(read_image(path), read_image(it->second), name));
  }
  for (const auto& [name, path] : truth)
    if (!generated.contains(name)) report.unmatched.push_back(name);
  std::sort(report.unmatched.begin(), report.unmatched.end());

  if (!report.unmatched.empty() && !allow_partial) {
    std::string list;
    for (const auto& n : report.unmatched) list += (list.empty() ? "" : ", ") + n;
    throw IoError("unmatched files: " + list);
  }
  if (report.rows.empty()) throw IoError("no matching image pairs between " + generated_dir.string() + " and " +
                                         truth_dir.string());
  report.means.filename = "mean";
  for (const auto& r : report.rows) {
    report.means.dtw += r.dtw;
    report.means.rmse += r.rmse;
    report.means.ssim += r.ssim;
    report.means.psnr += r.psnr;
    report.means.ergas += r.ergas;
    report.means.rase += r.rase;
  }
  const double n = static_cast<double>(report.rows.size());
  report.means.dtw /= n;
  report.means.rmse /= n;
  report.means.ssim /= n;
  report.means.psnr /= n;
  report.means.ergas /= n;
  report.means.rase /= n;
  return report;
}

std::string to_csv(const MetricReport& report) {
  std::string out = "filename,dtw,rmse,ssim,psnr,ergas,rase\n";
  char buf[256];
  auto emit = [&](const MetricRow& r) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.dtw, r.rmse, r.ssim, r.psnr, r.ergas,
                  r.rase);
    out += r.filename;
    out += buf;
  };
  for (const auto& r : report.rows) emit(r);
  emit(report.means);
  return out;
}

}  // namespace markdiff::metrics
