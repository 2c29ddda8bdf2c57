// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmpo/common.hpp"
#include "mmpo/rng.hpp"

namespace mmpo {

// Dense row-major array of reals. Shapes are lists of positive extents;
// a scalar is represented as shape [1].
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  explicit TensorT(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  TensorT(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static TensorT zeros(std::vector<std::int64_t> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<std::int64_t> shape, T value) {
    TensorT t(std::move(shape));
    for (T& v : t.data_) v = value;
    return t;
  }

  static TensorT scalar(T value) { return TensorT({1}, {value}); }

  static TensorT randn(std::vector<std::int64_t> shape, Rng& rng, T stddev = T(1)) {
    TensorT t(std::move(shape));
    for (T& v : t.data_) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
    return t;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::item: tensor of shape " + shape_str(shape_) +
                                  " is not scalar");
    }
    return data_[0];
  }

  TensorT reshaped(std::vector<std::int64_t> new_shape) const {
    if (checked_numel(new_shape) != numel()) {
      throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_str(shape_) + " as " +
                                  shape_str(new_shape));
    }
    return TensorT(std::move(new_shape), data_);
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
    std::int64_t n = 1;
    for (std::int64_t e : shape) {
      if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent in " + shape_str(shape));
      n *= e;
    }
    return n;
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<double>;

// Integer array for token ids and masks; same row-major layout.
class ITensor {
 public:
  ITensor() = default;

  explicit ITensor(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(Tensor::checked_numel(shape_)), 0) {}

  ITensor(std::vector<std::int64_t> shape, std::vector<std::int32_t> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != Tensor::checked_numel(shape_)) {
      throw std::invalid_argument("ITensor: data length does not match shape " + shape_str(shape_));
    }
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  std::vector<std::int32_t>& data() { return data_; }
  const std::vector<std::int32_t>& data() const { return data_; }

  std::int32_t& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  std::int32_t operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool operator==(const ITensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<std::int32_t> data_;
};

}  // namespace mmpo
