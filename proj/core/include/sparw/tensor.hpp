// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense tensor: a row-major buffer plus a shape. The engine uses
// 64-bit floats by default for testability; 32-bit is an opt-in for speed
// (experiment config `precision=f32`). All numeric kernels live in the
// autodiff layer; this type deliberately stays a dumb container.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparw {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape shape)
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(shape_numel(shape_)), T{0}) {}
  TensorT(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor: data size does not match shape " +
                                  shape_to_string(shape_));
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, T value) {
    TensorT t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const {
    return shape_.at(i);
  }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(data_.size());
  }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // Reshape in place; element count must be preserved.
  void reshape(Shape shape) {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("tensor: reshape changes element count (" +
                                  shape_to_string(shape_) + " -> " +
                                  shape_to_string(shape) + ")");
    shape_ = std::move(shape);
  }

  void fill(T value) {
    for (auto& x : data_) x = value;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const TensorT<T>& t);

using TensorF64 = TensorT<double>;
using TensorF32 = TensorT<float>;

}  // namespace sparw
