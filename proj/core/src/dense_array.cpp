// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/dense_array.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace markdiff {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("shape extents must be positive: " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

DenseArray::DenseArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

DenseArray::DenseArray(Shape shape, const std::vector<double>& data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

DenseArray DenseArray::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw std::invalid_argument("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw std::invalid_argument("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseArray({rows.size(), cols}, std::move(data));
}

double DenseArray::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on array of shape " + shape_string(shape_));
  return data_[0];
}

DenseArray DenseArray::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  DenseArray out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool DenseArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseArray::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

}  // namespace markdiff
