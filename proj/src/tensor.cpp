// SPDX-License-Identifier: Apache-2.0
#include "bater/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "bater/errors.hpp"

namespace bater {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto extent : shape_)
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto extent : shape_)
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  if (data_.size() != shape_size(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

std::size_t Tensor::cols() const noexcept {
  return shape_.empty() ? 1 : data_.size() / shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0])
    throw DimensionError("slice_rows out of range for shape " + shape_string(shape_));
  Shape shape = shape_;
  shape[0] = end - begin;
  const auto width = cols();
  return Tensor(std::move(shape),
                std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * width),
                                    data_.begin() + static_cast<std::ptrdiff_t>(end * width)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  if (shape_.empty() || indices.empty()) throw DimensionError("gather_rows needs a non-empty row selection");
  Shape shape = shape_;
  shape[0] = indices.size();
  const auto width = cols();
  std::vector<double> out;
  out.reserve(indices.size() * width);
  for (auto r : indices) {
    if (r >= shape_[0]) throw DimensionError("gather_rows index " + std::to_string(r) + " out of range");
    auto src = row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

}  // namespace bater
