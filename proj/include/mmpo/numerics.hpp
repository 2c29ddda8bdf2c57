// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmpo/common.hpp"

namespace mmpo {

// log(1 + e^x) without overflow on either tail.
template <typename T>
inline T log1pexp(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// log sigma(x) = -log(1 + e^{-x}), stable on both tails:
// min(x, 0) - log1p(e^{-|x|}).
template <typename T>
inline T log_sigmoid(T x) {
  if (std::isnan(x)) throw numeric_error("log_sigmoid: NaN input");
  return std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) {
    const T t = std::exp(-x);
    return T(1) / (T(1) + t);
  }
  const T t = std::exp(x);
  return t / (T(1) + t);
}

// log sum_i exp(v_i) via the max-shift identity, so no intermediate
// exponential can overflow. -inf entries are allowed and contribute zero
// mass (useful for log-space enumeration with zero weights).
template <typename T>
inline T logsumexp(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("logsumexp: empty input");
  T m = -std::numeric_limits<T>::infinity();
  for (T v : values) {
    if (std::isnan(v)) throw numeric_error("logsumexp: NaN input");
    m = std::max(m, v);
  }
  if (std::isinf(m) && m < T(0)) {
    throw numeric_error("logsumexp: all inputs are -inf (zero total mass)");
  }
  T sum = T(0);
  for (T v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

template <typename T>
inline T logsumexp(const std::vector<T>& values) {
  return logsumexp(std::span<const T>(values));
}

// Two-term logsumexp, the form the pairwise objectives use.
template <typename T>
inline T logaddexp(T a, T b) {
  if (std::isnan(a) || std::isnan(b)) throw numeric_error("logaddexp: NaN input");
  const T m = std::max(a, b);
  if (std::isinf(m) && m < T(0)) return m;  // both -inf
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// In-place softmax over a contiguous row, max-shifted.
template <typename T>
inline void softmax_inplace(std::span<T> row) {
  if (row.empty()) throw std::invalid_argument("softmax: empty row");
  T m = *std::max_element(row.begin(), row.end());
  T sum = T(0);
  for (T& v : row) {
    v = std::exp(v - m);
    sum += v;
  }
  for (T& v : row) v /= sum;
}

template <typename T>
inline std::vector<T> softmax(std::vector<T> values) {
  softmax_inplace(std::span<T>(values));
  return values;
}

// Shannon entropy of softmax(logits), computed through log-softmax so the
// 0 * log 0 limit is handled exactly.
template <typename T>
inline T entropy_from_logits(std::span<const T> logits) {
  if (logits.empty()) throw std::invalid_argument("entropy_from_logits: empty row");
  T m = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T v : logits) sum += std::exp(v - m);
  const T lse = m + std::log(sum);
  T h = T(0);
  for (T v : logits) {
    const T lp = v - lse;
    const T p = std::exp(lp);
    if (p > T(0)) h -= p * lp;
  }
  return h;
}

}  // namespace mmpo
