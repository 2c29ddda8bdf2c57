// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmpo {

// Contract violations (bad shapes, bad arguments) throw std::invalid_argument.
// Non-finite values in numeric code throw numeric_error so callers can tell
// "you called it wrong" apart from "the computation blew up".
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// FNV-1a, used for config hashes and checkpoint integrity sums.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= static_cast<std::uint64_t>(p[i]);
      hash_ *= 1099511628211ull;
    }
  }
  void update_str(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return hash_; }

  static std::uint64_t of(const std::string& s) {
    Fnv1a h;
    h.update_str(s);
    return h.digest();
  }

 private:
  std::uint64_t hash_ = 14695981039346656037ull;
};

}  // namespace mmpo
