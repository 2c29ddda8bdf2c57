// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmpo/common.hpp"

namespace mmpo {

// Byte-level tokenizer over a fixed 61-character alphabet, with reserved ids
// for pad / begin / end. Ids 3..63 map bijectively onto the alphabet, so
// detokenize(tokenize(s)) == s for every supported string and the total
// vocabulary is exactly 64.
class Tokenizer {
 public:
  static constexpr std::int32_t pad_id = 0;
  static constexpr std::int32_t begin_id = 1;
  static constexpr std::int32_t end_id = 2;

  Tokenizer() {
    byte_to_id_.fill(-1);
    for (std::size_t i = 0; i < alphabet().size(); ++i) {
      byte_to_id_[static_cast<unsigned char>(alphabet()[i])] = static_cast<std::int32_t>(i) + 3;
    }
  }

  static std::string_view alphabet() {
    static constexpr std::string_view kAlphabet =
        "abcdefghijklmnopqrstuvwxyz"
        "0123456789"
        " .,!?;:'-\"()"
        "+*/=<>@#&%"
        "^_~";
    return kAlphabet;
  }

  std::int64_t vocab_size() const { return 3 + static_cast<std::int64_t>(alphabet().size()); }

  bool supports(char c) const { return byte_to_id_[static_cast<unsigned char>(c)] >= 0; }

  std::vector<std::int32_t> tokenize(std::string_view text) const {
    std::vector<std::int32_t> out;
    out.reserve(text.size());
    for (char c : text) {
      const std::int32_t id = byte_to_id_[static_cast<unsigned char>(c)];
      if (id < 0) {
        throw std::invalid_argument("Tokenizer: unsupported byte 0x" + hex_byte(c) +
                                    " (alphabet covers 61 printable characters)");
      }
      out.push_back(id);
    }
    return out;
  }

  std::string detokenize(std::span<const std::int32_t> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (std::int32_t id : ids) {
      if (id == pad_id || id == begin_id || id == end_id) continue;
      if (id < 3 || id >= vocab_size()) {
        throw std::invalid_argument("Tokenizer: id " + std::to_string(id) + " out of range");
      }
      out.push_back(alphabet()[static_cast<std::size_t>(id - 3)]);
    }
    return out;
  }

  std::string detokenize(const std::vector<std::int32_t>& ids) const {
    return detokenize(std::span<const std::int32_t>(ids));
  }

 private:
  static std::string hex_byte(char c) {
    static const char* digits = "0123456789abcdef";
    const auto b = static_cast<unsigned char>(c);
    return std::string{digits[b >> 4], digits[b & 0xf]};
  }

  std::array<std::int32_t, 256> byte_to_id_{};
};

}  // namespace mmpo
