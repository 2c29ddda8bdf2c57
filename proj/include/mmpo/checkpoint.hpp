// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mmpo/common.hpp"
#include "mmpo/model.hpp"
#include "mmpo/tensor.hpp"

namespace mmpo {

// Binary checkpoint container (little-endian, version-tagged):
//   magic "MMPOCKP1" | u32 version | u8 flags | config json | u64 config hash
//   | u64 step | named f64 arrays | optional optimizer moments
//   | u64 FNV-1a integrity sum over everything after the magic.
// Idempotent: saving a loaded checkpoint reproduces the bytes exactly.

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'P', 'O', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json lm_config_to_json(const LmConfig& cfg) {
  return nlohmann::json{{"d_model", cfg.d_model},
                        {"max_seq_len", cfg.max_seq_len},
                        {"n_heads", cfg.n_heads},
                        {"n_layers", cfg.n_layers},
                        {"vocab_size", cfg.vocab_size}};
}

inline LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<std::int64_t>();
  cfg.d_model = j.at("d_model").get<std::int64_t>();
  cfg.n_layers = j.at("n_layers").get<std::int64_t>();
  cfg.n_heads = j.at("n_heads").get<std::int64_t>();
  cfg.max_seq_len = j.at("max_seq_len").get<std::int64_t>();
  cfg.validate();
  return cfg;
}

struct Checkpoint {
  LmConfig config;
  std::map<std::string, Tensor> params;
  bool has_optimizer_state = false;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> moment1;
  std::map<std::string, Tensor> moment2;
};

namespace detail {

class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& out) : out_(out) {}

  void write(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    hash_.update(data, n);
  }
  template <typename V>
  void write_pod(V v) {
    write(&v, sizeof(V));
  }
  void write_string(const std::string& s) {
    write_pod<std::uint64_t>(s.size());
    write(s.data(), s.size());
  }
  void write_tensor(const Tensor& t) {
    write_pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) write_pod<std::int64_t>(e);
    write(t.ptr(), sizeof(double) * static_cast<std::size_t>(t.numel()));
  }
  std::uint64_t digest() const { return hash_.digest(); }

 private:
  std::ostream& out_;
  Fnv1a hash_;
};

class HashingReader {
 public:
  explicit HashingReader(std::istream& in, const std::string& path) : in_(in), path_(path) {}

  void read(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw io_error("checkpoint integrity error (truncated file): " + path_);
    }
    hash_.update(data, n);
  }
  template <typename V>
  V read_pod() {
    V v;
    read(&v, sizeof(V));
    return v;
  }
  std::string read_string(std::size_t max_len = 1 << 24) {
    const auto n = read_pod<std::uint64_t>();
    if (n > max_len) throw io_error("checkpoint integrity error (bad string length): " + path_);
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  Tensor read_tensor() {
    const auto rank = read_pod<std::uint32_t>();
    if (rank == 0 || rank > 8) throw io_error("checkpoint integrity error (bad rank): " + path_);
    std::vector<std::int64_t> shape(rank);
    for (auto& e : shape) e = read_pod<std::int64_t>();
    Tensor t(shape);
    read(t.ptr(), sizeof(double) * static_cast<std::size_t>(t.numel()));
    return t;
  }
  std::uint64_t digest() const { return hash_.digest(); }

 private:
  std::istream& in_;
  std::string path_;
  Fnv1a hash_;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::HashingWriter w(out);
  w.write_pod<std::uint32_t>(kCheckpointVersion);
  w.write_pod<std::uint8_t>(ckpt.has_optimizer_state ? 1 : 0);
  const std::string cfg_json = lm_config_to_json(ckpt.config).dump();
  w.write_string(cfg_json);
  w.write_pod<std::uint64_t>(Fnv1a::of(cfg_json));
  w.write_pod<std::uint64_t>(ckpt.step);
  w.write_pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    w.write_string(name);
    w.write_tensor(tensor);
  }
  if (ckpt.has_optimizer_state) {
    for (const auto& [name, tensor] : ckpt.params) {
      (void)tensor;
      w.write_tensor(ckpt.moment1.at(name));
      w.write_tensor(ckpt.moment2.at(name));
    }
  }
  const std::uint64_t digest = w.digest();
  out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  if (!out) throw io_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw io_error("not a checkpoint file (bad magic): " + path);
  }
  detail::HashingReader r(in, path);
  const auto version = r.read_pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw io_error("checkpoint format version " + std::to_string(version) + " unsupported (want " +
                   std::to_string(kCheckpointVersion) + "): " + path);
  }
  Checkpoint ckpt;
  ckpt.has_optimizer_state = r.read_pod<std::uint8_t>() != 0;
  const std::string cfg_json = r.read_string();
  const auto cfg_hash = r.read_pod<std::uint64_t>();
  if (cfg_hash != Fnv1a::of(cfg_json)) {
    throw io_error("checkpoint integrity error (config hash mismatch): " + path);
  }
  ckpt.config = lm_config_from_json(nlohmann::json::parse(cfg_json));
  ckpt.step = r.read_pod<std::uint64_t>();
  const auto n_params = r.read_pod<std::uint32_t>();
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.read_string();
    ckpt.params.emplace(name, r.read_tensor());
    order.push_back(std::move(name));
  }
  if (ckpt.has_optimizer_state) {
    for (const auto& name : order) {
      ckpt.moment1.emplace(name, r.read_tensor());
      ckpt.moment2.emplace(name, r.read_tensor());
    }
  }
  const std::uint64_t computed = r.digest();
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (in.gcount() != sizeof(stored) || stored != computed) {
    throw io_error("checkpoint integrity error (hash mismatch): " + path);
  }
  return ckpt;
}

inline void save_model_checkpoint(const std::string& path, const PolicyModel& model) {
  Checkpoint ckpt;
  ckpt.config = model.config;
  ckpt.params = model.params;
  save_checkpoint(path, ckpt);
}

// Load parameters into a model, refusing config mismatches outright.
inline PolicyModel model_from_checkpoint(const Checkpoint& ckpt) {
  PolicyModel model = PolicyModel::init(ckpt.config, 0);
  for (auto& [name, tensor] : model.params) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end() || it->second.shape() != tensor.shape()) {
      throw io_error("checkpoint parameter mismatch at '" + name + "'");
    }
    tensor = it->second;
  }
  if (ckpt.params.size() != model.params.size()) {
    throw io_error("checkpoint carries unexpected extra parameters");
  }
  return model;
}

inline PolicyModel load_model_checkpoint(const std::string& path,
                                         const LmConfig* expected_config = nullptr) {
  Checkpoint ckpt = load_checkpoint(path);
  if (expected_config && !(ckpt.config == *expected_config)) {
    throw io_error("checkpoint config mismatch: file has " + lm_config_to_json(ckpt.config).dump() +
                   ", expected " + lm_config_to_json(*expected_config).dump());
  }
  return model_from_checkpoint(ckpt);
}

}  // namespace mmpo
