// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmpo/autodiff.hpp"
#include "mmpo/rng.hpp"
#include "mmpo/tensor.hpp"

namespace mmpo {

struct LmConfig {
  std::int64_t vocab_size = 64;
  std::int64_t d_model = 64;
  std::int64_t n_layers = 2;
  std::int64_t n_heads = 2;
  std::int64_t max_seq_len = 128;

  std::int64_t ffn_dim() const { return 4 * d_model; }
  std::int64_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0) {
      throw std::invalid_argument("LmConfig: extents must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("LmConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (max_seq_len < 2) throw std::invalid_argument("LmConfig: max_seq_len must be >= 2");
  }

  bool operator==(const LmConfig&) const = default;

  // Parameter count is a pure function of the config.
  std::int64_t expected_param_count() const {
    const std::int64_t d = d_model, f = ffn_dim(), v = vocab_size;
    const std::int64_t per_layer = 2 * d                 // ln1
                                   + 3 * (d * d + d)     // q, k, v
                                   + (d * d + d)         // attn out
                                   + 2 * d               // ln2
                                   + (d * f + f)         // ffn in
                                   + (f * d + d);        // ffn out
    return v * d + max_seq_len * d + n_layers * per_layer + 2 * d + d * v + v;
  }
};

// A batch of padded token sequences. Masks are {0,1}; completion_mask marks
// the positions whose tokens are scored (non-prompt, non-pad). Padding is
// always on the right, so causal attention alone keeps pad positions from
// influencing real ones.
template <typename T>
struct SequenceBatchT {
  ITensor token_ids;           // [B, T]
  TensorT<T> attention_mask;   // [B, T]
  TensorT<T> completion_mask;  // [B, T]

  std::int64_t batch_size() const { return token_ids.extent(0); }
  std::int64_t seq_len() const { return token_ids.extent(1); }

  void validate() const {
    const auto& sh = token_ids.shape();
    if (sh.size() != 2 || attention_mask.shape() != sh || completion_mask.shape() != sh) {
      throw std::invalid_argument("SequenceBatch: ids/masks must share a [B, T] shape");
    }
    const std::int64_t b = sh[0], t = sh[1];
    for (std::int64_t r = 0; r < b; ++r) {
      T completion_total = T(0);
      bool seen_pad = false;
      for (std::int64_t j = 0; j < t; ++j) {
        const T am = attention_mask[r * t + j];
        const T cm = completion_mask[r * t + j];
        if ((am != T(0) && am != T(1)) || (cm != T(0) && cm != T(1))) {
          throw std::invalid_argument("SequenceBatch: masks must be 0/1");
        }
        if (cm > am) {
          throw std::invalid_argument("SequenceBatch: completion_mask must be within attention_mask");
        }
        if (am == T(0)) seen_pad = true;
        else if (seen_pad) {
          throw std::invalid_argument("SequenceBatch: padding must be on the right");
        }
        completion_total += cm;
      }
      if (completion_total == T(0)) {
        throw std::invalid_argument("SequenceBatch: row " + std::to_string(r) +
                                    " has no completion tokens");
      }
    }
  }

  // Build from explicit rows. Row layout: [prompt tokens...][completion
  // tokens...]; prompt_lens[i] gives the prompt span (>= 1, the leading
  // begin-of-sequence token counts as prompt).
  static SequenceBatchT from_rows(const std::vector<std::vector<std::int32_t>>& rows,
                                  const std::vector<std::int64_t>& prompt_lens,
                                  std::int64_t pad_to = 0) {
    if (rows.empty() || rows.size() != prompt_lens.size()) {
      throw std::invalid_argument("SequenceBatch::from_rows: rows/prompt_lens mismatch");
    }
    std::int64_t t = pad_to;
    for (const auto& r : rows) t = std::max<std::int64_t>(t, static_cast<std::int64_t>(r.size()));
    const std::int64_t b = static_cast<std::int64_t>(rows.size());
    SequenceBatchT out;
    out.token_ids = ITensor({b, t});
    out.attention_mask = TensorT<T>({b, t});
    out.completion_mask = TensorT<T>({b, t});
    for (std::int64_t i = 0; i < b; ++i) {
      const auto& row = rows[static_cast<std::size_t>(i)];
      const std::int64_t len = static_cast<std::int64_t>(row.size());
      const std::int64_t plen = prompt_lens[static_cast<std::size_t>(i)];
      if (plen < 1 || plen >= len) {
        throw std::invalid_argument("SequenceBatch::from_rows: prompt length out of range");
      }
      for (std::int64_t j = 0; j < len; ++j) {
        out.token_ids[i * t + j] = row[static_cast<std::size_t>(j)];
        out.attention_mask[i * t + j] = T(1);
        out.completion_mask[i * t + j] = j >= plen ? T(1) : T(0);
      }
    }
    out.validate();
    return out;
  }
};

using SequenceBatch = SequenceBatchT<double>;

// Parameters of the tiny causal transformer. A frozen model never receives
// gradient updates; binding a frozen model produces constant graph nodes.
template <typename T>
struct PolicyModelT {
  LmConfig config;
  std::map<std::string, TensorT<T>> params;
  bool frozen = false;

  static PolicyModelT init(const LmConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    PolicyModelT m;
    m.config = cfg;
    Rng rng(seed);
    const T w_std = T(0.02);
    const std::int64_t d = cfg.d_model, f = cfg.ffn_dim(), v = cfg.vocab_size;
    auto randn = [&](std::vector<std::int64_t> shape) {
      return TensorT<T>::randn(std::move(shape), rng, w_std);
    };
    m.params.emplace("tok_emb", randn({v, d}));
    m.params.emplace("pos_emb", randn({cfg.max_seq_len, d}));
    for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      m.params.emplace(p + "ln1.g", TensorT<T>::full({d}, T(1)));
      m.params.emplace(p + "ln1.b", TensorT<T>::zeros({d}));
      m.params.emplace(p + "attn.wq", randn({d, d}));
      m.params.emplace(p + "attn.bq", TensorT<T>::zeros({d}));
      m.params.emplace(p + "attn.wk", randn({d, d}));
      m.params.emplace(p + "attn.bk", TensorT<T>::zeros({d}));
      m.params.emplace(p + "attn.wv", randn({d, d}));
      m.params.emplace(p + "attn.bv", TensorT<T>::zeros({d}));
      m.params.emplace(p + "attn.wo", randn({d, d}));
      m.params.emplace(p + "attn.bo", TensorT<T>::zeros({d}));
      m.params.emplace(p + "ln2.g", TensorT<T>::full({d}, T(1)));
      m.params.emplace(p + "ln2.b", TensorT<T>::zeros({d}));
      m.params.emplace(p + "ffn.w1", randn({d, f}));
      m.params.emplace(p + "ffn.b1", TensorT<T>::zeros({f}));
      m.params.emplace(p + "ffn.w2", randn({f, d}));
      m.params.emplace(p + "ffn.b2", TensorT<T>::zeros({d}));
    }
    m.params.emplace("final_ln.g", TensorT<T>::full({d}, T(1)));
    m.params.emplace("final_ln.b", TensorT<T>::zeros({d}));
    m.params.emplace("head.w", randn({d, v}));
    m.params.emplace("head.b", TensorT<T>::zeros({v}));
    return m;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : params) n += t.numel();
    return n;
  }

  PolicyModelT frozen_clone() const {
    PolicyModelT m = *this;
    m.frozen = true;
    return m;
  }
};

using PolicyModel = PolicyModelT<double>;

// One tape binding of a model's parameters: trainable models get gradient
// leaves, frozen models get constants.
template <typename T>
struct BoundModelT {
  const PolicyModelT<T>* model = nullptr;
  std::map<std::string, VarT<T>> leaves;

  VarT<T> at(const std::string& name) const {
    auto it = leaves.find(name);
    if (it == leaves.end()) throw std::invalid_argument("BoundModel: unknown parameter " + name);
    return it->second;
  }
};

template <typename T>
BoundModelT<T> bind(TapeT<T>& tape, const PolicyModelT<T>& model) {
  BoundModelT<T> b;
  b.model = &model;
  for (const auto& [name, tensor] : model.params) {
    b.leaves.emplace(name, tape.leaf(tensor, /*requires_grad=*/!model.frozen));
  }
  return b;
}

namespace detail {

template <typename T>
TensorT<T> causal_mask(std::int64_t t) {
  TensorT<T> m({t, t});
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j < t; ++j) {
      m[i * t + j] = j <= i ? T(0) : T(-1e30);
    }
  }
  return m;
}

}  // namespace detail

// Causal forward pass: logits at position t depend only on tokens <= t.
template <typename T>
VarT<T> forward_logits(TapeT<T>& tape, const BoundModelT<T>& bound,
                       const SequenceBatchT<T>& batch) {
  batch.validate();
  const LmConfig& cfg = bound.model->config;
  const std::int64_t b = batch.batch_size(), t = batch.seq_len();
  const std::int64_t d = cfg.d_model, h = cfg.n_heads, dh = cfg.head_dim(), v = cfg.vocab_size;
  if (t > cfg.max_seq_len) {
    throw std::invalid_argument("forward_logits: sequence length " + std::to_string(t) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (std::int64_t i = 0; i < batch.token_ids.numel(); ++i) {
    const std::int32_t id = batch.token_ids[i];
    if (id < 0 || id >= v) {
      throw std::invalid_argument("forward_logits: token id " + std::to_string(id) +
                                  " out of range for vocab " + std::to_string(v));
    }
  }

  auto x = tape.embedding(bound.at("tok_emb"), batch.token_ids);           // [B,T,D]
  auto pos = tape.slice(bound.at("pos_emb"), 0, 0, t);                     // [T,D]
  x = tape.add_broadcast(x, pos);

  auto mask = tape.constant(detail::causal_mask<T>(t));
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  auto linear = [&](VarT<T> in2d, const std::string& w, const std::string& bias) {
    return tape.add_broadcast(tape.matmul(in2d, bound.at(w)), bound.at(bias));
  };
  auto split_heads = [&](VarT<T> in2d) {
    // [B*T, D] -> [B*H, T, dh]
    auto r = tape.reshape(in2d, {b, t, h, dh});
    r = tape.permute(r, {0, 2, 1, 3});
    return tape.reshape(r, {b * h, t, dh});
  };

  for (std::int64_t layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string p = "layers." + std::to_string(layer) + ".";
    auto norm1 = tape.layer_norm(x, bound.at(p + "ln1.g"), bound.at(p + "ln1.b"));
    auto flat = tape.reshape(norm1, {b * t, d});
    auto q = split_heads(linear(flat, p + "attn.wq", p + "attn.bq"));
    auto k = split_heads(linear(flat, p + "attn.wk", p + "attn.bk"));
    auto val = split_heads(linear(flat, p + "attn.wv", p + "attn.bv"));

    auto scores = tape.scale(tape.bmm(q, tape.permute(k, {0, 2, 1})), inv_sqrt_dh);
    scores = tape.add_broadcast(scores, mask);  // [B*H, T, T]
    auto attn = tape.row_softmax(scores);
    auto ctx = tape.bmm(attn, val);  // [B*H, T, dh]
    ctx = tape.reshape(tape.permute(tape.reshape(ctx, {b, h, t, dh}), {0, 2, 1, 3}), {b * t, d});
    auto proj = tape.reshape(linear(ctx, p + "attn.wo", p + "attn.bo"), {b, t, d});
    x = tape.add(x, proj);

    auto norm2 = tape.layer_norm(x, bound.at(p + "ln2.g"), bound.at(p + "ln2.b"));
    auto hflat = tape.reshape(norm2, {b * t, d});
    auto inner = tape.tanh_(linear(hflat, p + "ffn.w1", p + "ffn.b1"));
    auto ffn = tape.reshape(linear(inner, p + "ffn.w2", p + "ffn.b2"), {b, t, d});
    x = tape.add(x, ffn);
  }

  x = tape.layer_norm(x, bound.at("final_ln.g"), bound.at("final_ln.b"));
  auto logits = linear(tape.reshape(x, {b * t, d}), "head.w", "head.b");
  return tape.reshape(logits, {b, t, v});
}

// Per-sequence scoring pieces shared by the objectives. Prediction slots are
// aligned so that slot j of token_logps holds log pi(token_{j+1} | tokens <= j);
// the slot mask marks slots that predict a completion token.
template <typename T>
struct LmOutputsT {
  VarT<T> logits;              // [B,T,V]
  VarT<T> token_logps;         // [B,T], masked to completion prediction slots
  VarT<T> seq_logps;           // [B], sum (or per-token mean) over completion
  TensorT<T> slot_mask;        // [B,T] constant used for the masking
  TensorT<T> completion_counts;  // [B]
};

template <typename T>
struct ShiftedTargets {
  ITensor ids;          // [B,T] slot j = token j+1 (0 past the end)
  TensorT<T> mask;      // [B,T] slot j = completion_mask[j+1]
  TensorT<T> counts;    // [B]
};

template <typename T>
ShiftedTargets<T> shifted_targets(const SequenceBatchT<T>& batch) {
  const std::int64_t b = batch.batch_size(), t = batch.seq_len();
  // A completion token at position 0 would have no prediction slot; rows
  // always start with a prompt/begin token, enforced by the count check below.
  ShiftedTargets<T> out;
  out.ids = ITensor({b, t});
  out.mask = TensorT<T>({b, t});
  out.counts = TensorT<T>({b});
  for (std::int64_t r = 0; r < b; ++r) {
    T count = T(0);
    for (std::int64_t j = 0; j + 1 < t; ++j) {
      out.ids[r * t + j] = batch.token_ids[r * t + j + 1];
      const T m = batch.completion_mask[r * t + j + 1];
      out.mask[r * t + j] = m;
      count += m;
    }
    out.counts[r] = count;
    if (count == T(0)) {
      throw std::invalid_argument("score: row " + std::to_string(r) +
                                  " has no completion tokens to score");
    }
  }
  return out;
}

template <typename T>
LmOutputsT<T> score_sequences(TapeT<T>& tape, const BoundModelT<T>& bound,
                              const SequenceBatchT<T>& batch, bool length_normalized = false) {
  LmOutputsT<T> out;
  out.logits = forward_logits(tape, bound, batch);
  ShiftedTargets<T> tgt = shifted_targets(batch);

  auto logp = tape.row_log_softmax(out.logits);           // [B,T,V]
  auto gathered = tape.gather_last(logp, tgt.ids);        // [B,T]
  out.token_logps = tape.mul(gathered, tape.constant(tgt.mask));
  auto sums = tape.row_sum(out.token_logps);              // [B]
  if (length_normalized) {
    TensorT<T> inv = tgt.counts;
    for (auto& c : inv.data()) c = T(1) / c;
    sums = tape.mul(sums, tape.constant(inv));
  }
  out.seq_logps = sums;
  out.slot_mask = std::move(tgt.mask);
  out.completion_counts = std::move(tgt.counts);
  return out;
}

// Convenience wrapper when only the values are needed (frozen reference,
// evaluation): runs on a private tape with constant parameters.
template <typename T>
TensorT<T> sequence_log_prob(const PolicyModelT<T>& model, const SequenceBatchT<T>& batch,
                             bool length_normalized = false) {
  TapeT<T> tape;
  PolicyModelT<T> local = model;  // bound as constants regardless of frozen flag
  local.frozen = true;
  auto bound = bind(tape, local);
  return score_sequences(tape, bound, batch, length_normalized).seq_logps.value();
}

// Next-step entropies H(pi(. | tokens <= j)) at every completion prediction
// slot, zero elsewhere; differentiable w.r.t. the bound parameters.
template <typename T>
VarT<T> token_entropies(TapeT<T>& tape, const BoundModelT<T>& bound,
                        const SequenceBatchT<T>& batch) {
  auto logits = forward_logits(tape, bound, batch);
  ShiftedTargets<T> tgt = shifted_targets(batch);
  auto ent = tape.row_entropy(logits);  // [B,T]
  return tape.mul(ent, tape.constant(tgt.mask));
}

template <typename T>
TensorT<T> token_entropies_value(const PolicyModelT<T>& model, const SequenceBatchT<T>& batch) {
  TapeT<T> tape;
  PolicyModelT<T> local = model;
  local.frozen = true;
  auto bound = bind(tape, local);
  return token_entropies(tape, bound, batch).value();
}

// Ancestral sampling. Returns the generated tokens after the prompt; stops
// before emitting more than max_new tokens or once end_token appears (the
// end token itself is not returned). temperature <= 1e-8 means greedy.
template <typename T>
std::vector<std::int32_t> sample_completion(const PolicyModelT<T>& model,
                                            const std::vector<std::int32_t>& prompt,
                                            std::int64_t max_new, double temperature, Rng& rng,
                                            std::int32_t end_token = -1) {
  if (temperature < 0.0) throw std::invalid_argument("sample_completion: temperature must be >= 0");
  if (prompt.empty()) throw std::invalid_argument("sample_completion: empty prompt");
  PolicyModelT<T> local = model;
  local.frozen = true;
  std::vector<std::int32_t> seq = prompt;
  std::vector<std::int32_t> generated;
  for (std::int64_t step = 0; step < max_new; ++step) {
    if (static_cast<std::int64_t>(seq.size()) >= model.config.max_seq_len) break;
    TapeT<T> tape;
    auto bound = bind(tape, local);
    SequenceBatchT<T> batch;
    const std::int64_t t = static_cast<std::int64_t>(seq.size());
    batch.token_ids = ITensor({1, t}, seq);
    batch.attention_mask = TensorT<T>::full({1, t}, T(1));
    batch.completion_mask = TensorT<T>::zeros({1, t});
    batch.completion_mask[t - 1] = T(1);  // placeholder so validate() passes
    auto logits = forward_logits(tape, bound, batch);
    const std::int64_t v = model.config.vocab_size;
    const T* last = logits.value().ptr() + (t - 1) * v;

    std::int32_t next;
    if (temperature <= 1e-8) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < v; ++j) {
        if (last[j] > last[best]) best = j;
      }
      next = static_cast<std::int32_t>(best);
    } else {
      std::vector<double> scaled(static_cast<std::size_t>(v));
      for (std::int64_t j = 0; j < v; ++j) scaled[static_cast<std::size_t>(j)] = static_cast<double>(last[j]) / temperature;
      softmax_inplace(std::span<double>(scaled));
      next = static_cast<std::int32_t>(rng.categorical(scaled));
    }
    if (next == end_token) break;
    generated.push_back(next);
    seq.push_back(next);
  }
  return generated;
}

template <typename T>
std::vector<std::int32_t> sample_completion(const PolicyModelT<T>& model,
                                            const std::vector<std::int32_t>& prompt,
                                            std::int64_t max_new, double temperature,
                                            std::uint64_t seed, std::int32_t end_token = -1) {
  Rng rng(seed);
  return sample_completion(model, prompt, max_new, temperature, rng, end_token);
}

}  // namespace mmpo
