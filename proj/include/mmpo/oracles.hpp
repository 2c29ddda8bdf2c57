// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mmpo/autodiff.hpp"
#include "mmpo/entropy.hpp"
#include "mmpo/model.hpp"
#include "mmpo/numerics.hpp"
#include "mmpo/objectives.hpp"
#include "mmpo/rng.hpp"

namespace mmpo {

// ---- finite differences ----

// Central differences (f(p+h) - f(p-h)) / 2h, one probe pair per coordinate.
template <typename T>
std::map<std::string, TensorT<T>> finite_difference_gradient(
    const std::function<T(const std::map<std::string, TensorT<T>>&)>& f,
    const std::map<std::string, TensorT<T>>& params, T h) {
  if (h <= T(0)) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
  std::map<std::string, TensorT<T>> work = params;
  std::map<std::string, TensorT<T>> grads;
  for (auto& [name, tensor] : work) {
    TensorT<T> g(tensor.shape());
    for (std::int64_t i = 0; i < tensor.numel(); ++i) {
      const T orig = tensor[i];
      tensor[i] = orig + h;
      const T fp = f(work);
      tensor[i] = orig - h;
      const T fm = f(work);
      tensor[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw numeric_error("finite_difference_gradient: non-finite loss probing " + name + "[" +
                            std::to_string(i) + "]");
      }
      g[i] = (fp - fm) / (T(2) * h);
    }
    grads.emplace(name, std::move(g));
  }
  return grads;
}

struct GradCheckReport {
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::string worst;  // "param[i]"
  bool pass = false;
};

// Relative error with an absolute floor, so coordinates whose true gradient
// is ~0 are compared against the floor instead of each other.
template <typename T>
GradCheckReport compare_gradients(const std::map<std::string, TensorT<T>>& a,
                                  const std::map<std::string, TensorT<T>>& b, double rtol,
                                  double floor = 1e-4) {
  GradCheckReport rep;
  for (const auto& [name, ga] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw std::invalid_argument("compare_gradients: missing " + name);
    const auto& gb = it->second;
    for (std::int64_t i = 0; i < ga.numel(); ++i) {
      const double av = static_cast<double>(ga[i]);
      const double bv = static_cast<double>(gb[i]);
      const double abs_err = std::abs(av - bv);
      const double rel = abs_err / std::max({floor, std::abs(av), std::abs(bv)});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    }
  }
  rep.pass = rep.max_rel_err < rtol;
  return rep;
}

template <typename T>
double max_elementwise_deviation(const std::map<std::string, TensorT<T>>& a,
                                 const std::map<std::string, TensorT<T>>& b) {
  double dev = 0;
  for (const auto& [name, ga] : a) {
    const auto& gb = b.at(name);
    for (std::int64_t i = 0; i < ga.numel(); ++i) {
      dev = std::max(dev, std::abs(static_cast<double>(ga[i]) - static_cast<double>(gb[i])));
    }
  }
  return dev;
}

// ---- enumeration ----

// A completion space small enough to sum over outright. Completions are
// fixed-length max_len sequences over the full vocabulary (the end token is
// an ordinary symbol here), so the policy's probability mass over the space
// is exactly 1.
struct EnumerationSpace {
  std::int64_t vocab_size = 3;
  std::int64_t max_len = 3;
  std::vector<std::int32_t> prompt{0};

  std::int64_t count() const {
    std::int64_t n = 1;
    for (std::int64_t i = 0; i < max_len; ++i) n *= vocab_size;
    return n;
  }

  void validate() const {
    if (vocab_size < 2 || vocab_size > 5) {
      throw std::invalid_argument("EnumerationSpace: vocab_size must be in [2, 5]");
    }
    if (max_len < 1 || max_len > 4) {
      throw std::invalid_argument("EnumerationSpace: max_len must be in [1, 4]");
    }
    if (prompt.empty()) throw std::invalid_argument("EnumerationSpace: prompt must be nonempty");
    for (auto t : prompt) {
      if (t < 0 || t >= vocab_size) {
        throw std::invalid_argument("EnumerationSpace: prompt token out of vocabulary");
      }
    }
  }
};

inline std::vector<std::vector<std::int32_t>> all_completions(const EnumerationSpace& space) {
  space.validate();
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(static_cast<std::size_t>(space.count()));
  std::vector<std::int32_t> cur(static_cast<std::size_t>(space.max_len), 0);
  const std::int64_t n = space.count();
  for (std::int64_t idx = 0; idx < n; ++idx) {
    std::int64_t rem = idx;  // lexicographic: most significant digit first
    for (std::int64_t pos = space.max_len - 1; pos >= 0; --pos) {
      cur[static_cast<std::size_t>(pos)] = static_cast<std::int32_t>(rem % space.vocab_size);
      rem /= space.vocab_size;
    }
    out.push_back(cur);
  }
  return out;
}

template <typename T>
SequenceBatchT<T> enumeration_batch(const EnumerationSpace& space,
                                    const std::vector<std::vector<std::int32_t>>& completions) {
  std::vector<std::vector<std::int32_t>> rows;
  std::vector<std::int64_t> prompt_lens;
  rows.reserve(completions.size());
  for (const auto& c : completions) {
    std::vector<std::int32_t> row = space.prompt;
    row.insert(row.end(), c.begin(), c.end());
    rows.push_back(std::move(row));
    prompt_lens.push_back(static_cast<std::int64_t>(space.prompt.size()));
  }
  return SequenceBatchT<T>::from_rows(rows, prompt_lens);
}

// log sum_z pi(z|x) * w(z) over the whole space, in log space.
// w must be a nonnegative weight (e.g. e^{R(y,z)}).
template <typename T>
T exact_mml(const PolicyModelT<T>& model,
            const std::function<double(const std::vector<std::int32_t>&)>& weight_fn,
            const EnumerationSpace& space) {
  const auto completions = all_completions(space);
  const auto batch = enumeration_batch<T>(space, completions);
  const TensorT<T> logps = sequence_log_prob(model, batch);
  std::vector<T> terms;
  terms.reserve(completions.size());
  for (std::size_t i = 0; i < completions.size(); ++i) {
    const double w = weight_fn(completions[i]);
    if (w < 0) throw std::invalid_argument("exact_mml: negative weight");
    if (w == 0) continue;
    terms.push_back(logps[static_cast<std::int64_t>(i)] + static_cast<T>(std::log(w)));
  }
  if (terms.empty()) throw numeric_error("exact_mml: zero weight for every sequence");
  return logsumexp<T>(terms);
}

// ---- oracle reports ----

struct OracleReport {
  std::string claim;
  std::string description;
  double deviation = 0;
  double tolerance = 0;
  bool pass = false;
  std::int64_t cases = 0;
  std::vector<std::string> details;

  void finalize() { pass = deviation <= tolerance; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"claim", claim},       {"description", description},
                          {"deviation", deviation}, {"tolerance", tolerance},
                          {"pass", pass},         {"cases", cases}};
  }
};

struct OracleOptions {
  std::uint64_t seed = 12345;
  bool inject_theorem1_sign_flip = false;  // negative-control hook
};

namespace detail {

inline LmConfig oracle_lm_config(std::int64_t vocab) {
  LmConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 12;
  return cfg;
}

// Sample B completions of exactly max_len tokens by batched ancestral
// sampling from the model (temperature 1, no early stop).
template <typename T>
std::vector<std::vector<std::int32_t>> sample_fixed_length_batch(const PolicyModelT<T>& model,
                                                                 const EnumerationSpace& space,
                                                                 std::int64_t b, Rng& rng) {
  PolicyModelT<T> frozen = model;
  frozen.frozen = true;
  std::vector<std::vector<std::int32_t>> rows(static_cast<std::size_t>(b), space.prompt);
  const std::int64_t v = model.config.vocab_size;
  for (std::int64_t step = 0; step < space.max_len; ++step) {
    const std::int64_t t = static_cast<std::int64_t>(rows[0].size());
    SequenceBatchT<T> batch;
    batch.token_ids = ITensor({b, t});
    batch.attention_mask = TensorT<T>::full({b, t}, T(1));
    batch.completion_mask = TensorT<T>::zeros({b, t});
    for (std::int64_t r = 0; r < b; ++r) {
      for (std::int64_t j = 0; j < t; ++j) batch.token_ids[r * t + j] = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
      batch.completion_mask[r * t + t - 1] = T(1);
    }
    TapeT<T> tape;
    auto bound = bind(tape, frozen);
    auto logits = forward_logits(tape, bound, batch);
    for (std::int64_t r = 0; r < b; ++r) {
      const T* last = logits.value().ptr() + (r * t + (t - 1)) * v;
      std::vector<double> probs(static_cast<std::size_t>(v));
      for (std::int64_t j = 0; j < v; ++j) probs[static_cast<std::size_t>(j)] = static_cast<double>(last[j]);
      softmax_inplace(std::span<double>(probs));
      rows[static_cast<std::size_t>(r)].push_back(static_cast<std::int32_t>(rng.categorical(probs)));
    }
  }
  for (auto& r : rows) r.erase(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(space.prompt.size()));
  return rows;
}

// Slot index (in the shifted layout) that predicts completion token k.
inline std::int64_t prediction_slot(std::int64_t prompt_len, std::int64_t k) {
  return prompt_len + k - 1;
}

}  // namespace detail

// Lemma: shift identity of logsumexp plus the max / max + ln n sandwich.
inline OracleReport check_lemma1(std::uint64_t seed) {
  OracleReport rep;
  rep.claim = "lemma1";
  rep.description = "logsumexp shift identity (incl. +/-1000) and sandwich bounds";
  rep.tolerance = 1e-12;
  Rng rng(seed);
  double dev = 0;
  const std::vector<double> shifts = {-1000.0, -1.0, 0.0, 0.5, 1000.0};
  for (int it = 0; it < 200; ++it) {
    const std::size_t n = 2 + rng.uniform_int(7);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-5.0, 5.0);
    const double base = logsumexp(v);
    for (double c : shifts) {
      std::vector<double> shifted = v;
      for (auto& x : shifted) x += c;
      dev = std::max(dev, std::abs(logsumexp(shifted) - (base + c)));
    }
    rep.cases += static_cast<std::int64_t>(shifts.size());
  }
  // huge equal inputs: exact value is 1000 + ln 2, no overflow allowed
  dev = std::max(dev, std::abs(logsumexp(std::vector<double>{1000.0, 1000.0}) -
                               (1000.0 + std::log(2.0))));
  ++rep.cases;
  for (int it = 0; it < 1000; ++it) {
    const std::size_t n = 1 + rng.uniform_int(8);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-20.0, 20.0);
    const double lse = logsumexp(v);
    const double mx = *std::max_element(v.begin(), v.end());
    dev = std::max(dev, mx - lse);                                      // lse >= max
    dev = std::max(dev, lse - (mx + std::log(static_cast<double>(n))));  // lse <= max + ln n
    ++rep.cases;
  }
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// Marginalization sanity: sum_z pi(z|x) = 1 over the enumeration space.
template <typename T = double>
OracleReport check_eq2_normalization(std::uint64_t seed, std::int64_t n_models = 20) {
  OracleReport rep;
  rep.claim = "normalization";
  rep.description = "enumerated sum_z pi(z|x) equals 1 for random policies";
  rep.tolerance = 1e-8;
  EnumerationSpace space;  // vocab 3, len 3
  const auto completions = all_completions(space);
  double dev = 0;
  for (std::int64_t m = 0; m < n_models; ++m) {
    auto model = PolicyModelT<T>::init(detail::oracle_lm_config(space.vocab_size), seed + static_cast<std::uint64_t>(m));
    const auto batch = enumeration_batch<T>(space, completions);
    const TensorT<T> logps = sequence_log_prob(model, batch);
    std::vector<T> v(logps.data());
    dev = std::max(dev, std::abs(static_cast<double>(std::exp(logsumexp<T>(v))) - 1.0));
    ++rep.cases;
  }
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// Jensen: log sum pi*w >= sum pi*log w, with equality for constant w.
template <typename T = double>
OracleReport check_jensen_bound(std::uint64_t seed, std::int64_t n_instances = 100) {
  OracleReport rep;
  rep.claim = "jensen";
  rep.description = "marginal-likelihood objective upper-bounds the weighted log-weight sum";
  rep.tolerance = 1e-12;
  Rng rng(seed);
  EnumerationSpace space;
  const auto completions = all_completions(space);
  const std::size_t n = completions.size();
  double dev = -1e300;
  for (std::int64_t inst = 0; inst < n_instances; ++inst) {
    auto model = PolicyModelT<T>::init(detail::oracle_lm_config(space.vocab_size),
                                       seed * 31 + static_cast<std::uint64_t>(inst));
    const auto batch = enumeration_batch<T>(space, completions);
    const TensorT<T> logps = sequence_log_prob(model, batch);

    std::vector<double> log_w(n);
    const int mode = inst % 4;
    for (std::size_t i = 0; i < n; ++i) {
      if (mode == 1) {
        log_w[i] = 0.7;  // constant weights: equality case
      } else if (mode == 2) {
        // two-point support, everything else carries tiny positive weight
        log_w[i] = (i == 3 || i == n - 2) ? rng.uniform(-1.0, 1.0) : -30.0;
      } else {
        log_w[i] = rng.uniform(-3.0, 3.0);
      }
    }
    std::vector<T> terms(n);
    double bound = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double lp = static_cast<double>(logps[static_cast<std::int64_t>(i)]);
      terms[i] = static_cast<T>(lp + log_w[i]);
      bound += std::exp(lp) * log_w[i];
    }
    const double j_mml = static_cast<double>(logsumexp<T>(terms));
    dev = std::max(dev, bound - j_mml);
    if (mode == 1) {
      // Jensen is tight for constants; equality must hold to fp noise.
      dev = std::max(dev, std::abs(bound - j_mml) - 1e-12);
    }
    ++rep.cases;
  }
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// The implicit-preference-gradient identity: the autodiff gradient of the
// two-sample logsumexp objective equals the sigmoid-weighted sum of the two
// sequence-log-prob gradients, computed from independent backward passes.
template <typename T = double>
OracleReport check_theorem1_gradient(std::uint64_t seed,
                                     const std::vector<double>& betas = {0.01, 0.05, 0.5},
                                     std::int64_t n_triples = 20, bool inject_sign_flip = false) {
  OracleReport rep;
  rep.claim = "theorem1";
  rep.description = "two-sample logsumexp gradient = sigmoid-weighted log-prob gradients";
  rep.tolerance = 1e-8;
  Rng rng(seed);
  const LmConfig cfg = detail::oracle_lm_config(4);
  double dev = 0;

  for (std::int64_t i = 0; i < n_triples; ++i) {
    auto model = PolicyModelT<T>::init(cfg, seed + 1000 + static_cast<std::uint64_t>(i));
    auto ref = PolicyModelT<T>::init(cfg, seed + 2000 + static_cast<std::uint64_t>(i));
    ref.frozen = true;

    const std::int64_t prompt_len = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t len_w = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t len_l = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
    auto draw = [&](std::int64_t len) {
      std::vector<std::int32_t> v(static_cast<std::size_t>(len));
      for (auto& x : v) x = static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(cfg.vocab_size)));
      return v;
    };
    const auto prompt = draw(prompt_len);
    auto row_w = prompt, row_l = prompt;
    const auto cw = draw(len_w), cl = draw(len_l);
    row_w.insert(row_w.end(), cw.begin(), cw.end());
    row_l.insert(row_l.end(), cl.begin(), cl.end());
    auto batch_w = SequenceBatchT<T>::from_rows({row_w}, {prompt_len});
    auto batch_l = SequenceBatchT<T>::from_rows({row_l}, {prompt_len});

    const T ref_w = sequence_log_prob(ref, batch_w)[0];
    const T ref_l = sequence_log_prob(ref, batch_l)[0];

    for (double beta : betas) {
      for (int ordering = 0; ordering < 2; ++ordering) {
        // Reward constants per the score definition; the margin constants
        // force both score orderings to occur.
        const T r_w = static_cast<T>((ordering == 0 ? 0.9 : -3.0) + beta * static_cast<double>(ref_w));
        const T r_l = static_cast<T>((ordering == 0 ? 0.1 : 3.0) + beta * static_cast<double>(ref_l));

        // Path A: one graph through logsumexp.
        TapeT<T> tape_a;
        auto bound_a = bind(tape_a, model);
        auto s_w = tape_a.add_scalar(score_sequences(tape_a, bound_a, batch_w).seq_logps, r_w);
        auto s_l = tape_a.add_scalar(score_sequences(tape_a, bound_a, batch_l).seq_logps, r_l);
        auto objective = tape_a.logaddexp(s_w, s_l);
        tape_a.backward(objective);
        auto grad_a = gradient_map(bound_a.leaves);

        // Path B: closed form from two independent backward passes.
        TapeT<T> tape_w;
        auto bound_w = bind(tape_w, model);
        tape_w.backward(score_sequences(tape_w, bound_w, batch_w).seq_logps);
        auto grad_w = gradient_map(bound_w.leaves);

        TapeT<T> tape_l;
        auto bound_l = bind(tape_l, model);
        tape_l.backward(score_sequences(tape_l, bound_l, batch_l).seq_logps);
        auto grad_l = gradient_map(bound_l.leaves);

        const T margin = s_w.value()[0] - s_l.value()[0];
        T weight_w = sigmoid(margin);
        T weight_l = sigmoid(-margin);
        if (inject_sign_flip) weight_w = sigmoid(-margin);  // negative control

        std::map<std::string, TensorT<T>> combined;
        for (const auto& [name, gw] : grad_w) {
          TensorT<T> g(gw.shape());
          const auto& gl = grad_l.at(name);
          for (std::int64_t j = 0; j < g.numel(); ++j) g[j] = weight_w * gw[j] + weight_l * gl[j];
          combined.emplace(name, std::move(g));
        }
        dev = std::max(dev, max_elementwise_deviation(grad_a, combined));
        ++rep.cases;
      }
    }
  }
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// Both sequence-entropy computations: direct -sum pi log pi over full
// sequences, and the prefix-weighted sum of per-step entropies.
struct SequenceEntropyResult {
  double direct = 0;
  double per_step = 0;
};

template <typename T = double>
SequenceEntropyResult exact_sequence_entropy(const PolicyModelT<T>& model,
                                             const EnumerationSpace& space) {
  space.validate();
  const auto completions = all_completions(space);
  const auto batch = enumeration_batch<T>(space, completions);
  PolicyModelT<T> frozen = model;
  frozen.frozen = true;
  TapeT<T> tape;
  auto bound = bind(tape, frozen);
  auto outs = score_sequences(tape, bound, batch);
  auto ent = tape.mul(tape.row_entropy(outs.logits), tape.constant(outs.slot_mask));

  const TensorT<T>& seq_lp = outs.seq_logps.value();
  SequenceEntropyResult res;
  for (std::int64_t i = 0; i < seq_lp.numel(); ++i) {
    const double lp = static_cast<double>(seq_lp[i]);
    res.direct -= std::exp(lp) * lp;
  }

  const std::int64_t plen = static_cast<std::int64_t>(space.prompt.size());
  const std::int64_t t = batch.seq_len();
  const std::int64_t v = space.vocab_size;
  const TensorT<T>& tlp = outs.token_logps.value();
  const TensorT<T>& hs = ent.value();
  // prefixes of length k: representative row = prefix_index * v^(L-k)
  for (std::int64_t k = 0; k < space.max_len; ++k) {
    std::int64_t n_prefix = 1, stride = 1;
    for (std::int64_t i = 0; i < k; ++i) n_prefix *= v;
    for (std::int64_t i = 0; i < space.max_len - k; ++i) stride *= v;
    for (std::int64_t p = 0; p < n_prefix; ++p) {
      const std::int64_t row = p * stride;
      double prefix_lp = 0;
      for (std::int64_t j = 0; j < k; ++j) {
        prefix_lp += static_cast<double>(tlp[row * t + detail::prediction_slot(plen, j)]);
      }
      const double h = static_cast<double>(hs[row * t + detail::prediction_slot(plen, k)]);
      res.per_step += std::exp(prefix_lp) * h;
    }
  }
  return res;
}

template <typename T = double>
OracleReport check_entropy_decomposition(std::uint64_t seed, std::int64_t n_models = 10) {
  OracleReport rep;
  rep.claim = "entropy_decomposition";
  rep.description = "per-step entropy decomposition matches direct sequence entropy";
  rep.tolerance = 1e-10;
  EnumerationSpace space;
  double dev = 0;
  for (std::int64_t m = 0; m < n_models; ++m) {
    auto model = PolicyModelT<T>::init(detail::oracle_lm_config(space.vocab_size),
                                       seed + 7000 + static_cast<std::uint64_t>(m));
    auto res = exact_sequence_entropy(model, space);
    dev = std::max(dev, std::abs(res.direct - res.per_step));
    ++rep.cases;
  }
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// Exact gradient of beta * H(sequence distribution) via autodiff through the
// direct entropy, for comparison against the two-part estimator.
template <typename T = double>
std::map<std::string, TensorT<T>> exact_entropy_gradient(const PolicyModelT<T>& model,
                                                         const EnumerationSpace& space,
                                                         double beta) {
  const auto completions = all_completions(space);
  const auto batch = enumeration_batch<T>(space, completions);
  TapeT<T> tape;
  auto bound = bind(tape, model);
  auto seq = score_sequences(tape, bound, batch).seq_logps;             // [N]
  auto negent = tape.sum_all(tape.mul(tape.exp_(seq), seq));            // sum p log p
  auto objective = tape.scale(negent, static_cast<T>(-beta));           // beta * H
  tape.backward(objective);
  return gradient_map(bound.leaves);
}

// Enumeration-weighted two-part estimator gradient: replaces the minibatch
// average over sampled completions with the exact prefix distribution.
template <typename T = double>
std::map<std::string, TensorT<T>> enumeration_weighted_estimator_gradient(
    const PolicyModelT<T>& model, const EnumerationSpace& space, double beta) {
  const auto completions = all_completions(space);
  const auto batch = enumeration_batch<T>(space, completions);
  TapeT<T> tape;
  auto bound = bind(tape, model);
  auto outs = score_sequences(tape, bound, batch);
  auto ent = tape.mul(tape.row_entropy(outs.logits), tape.constant(outs.slot_mask));

  const std::int64_t plen = static_cast<std::int64_t>(space.prompt.size());
  const std::int64_t t = batch.seq_len();
  const std::int64_t v = space.vocab_size;
  const TensorT<T>& tlp = outs.token_logps.value();
  const TensorT<T>& hs = ent.value();

  TensorT<T> w_ent(TensorT<T>::zeros({batch.batch_size(), t}));
  TensorT<T> w_lp(TensorT<T>::zeros({batch.batch_size(), t}));
  for (std::int64_t k = 0; k < space.max_len; ++k) {
    std::int64_t n_prefix = 1, stride = 1;
    for (std::int64_t i = 0; i < k; ++i) n_prefix *= v;
    for (std::int64_t i = 0; i < space.max_len - k; ++i) stride *= v;
    for (std::int64_t p = 0; p < n_prefix; ++p) {
      const std::int64_t row = p * stride;
      double prefix_lp = 0;
      for (std::int64_t j = 0; j < k; ++j) {
        prefix_lp += static_cast<double>(tlp[row * t + detail::prediction_slot(plen, j)]);
      }
      const double prob = std::exp(prefix_lp);
      const std::int64_t slot_k = detail::prediction_slot(plen, k);
      const double h_det = static_cast<double>(hs[row * t + slot_k]);
      w_ent[row * t + slot_k] += static_cast<T>(prob);  // P2 weighting
      for (std::int64_t j = 0; j < k; ++j) {            // P1: score-function term
        w_lp[row * t + detail::prediction_slot(plen, j)] += static_cast<T>(prob * h_det);
      }
    }
  }
  auto surrogate = tape.add(tape.sum_all(tape.mul(ent, tape.constant(w_ent))),
                            tape.sum_all(tape.mul(outs.token_logps, tape.constant(w_lp))));
  tape.backward(tape.scale(surrogate, static_cast<T>(beta)));
  return gradient_map(bound.leaves);
}

template <typename T = double>
OracleReport check_entropy_gradient(std::uint64_t seed, double beta = 0.05,
                                    std::int64_t n_models = 5) {
  OracleReport rep;
  rep.claim = "entropy_gradient";
  rep.description = "exact entropy gradient matches enumeration-weighted two-part estimator";
  rep.tolerance = 1e-8;
  EnumerationSpace space;
  double dev = 0;
  for (std::int64_t m = 0; m < n_models; ++m) {
    auto model = PolicyModelT<T>::init(detail::oracle_lm_config(space.vocab_size),
                                       seed + 9000 + static_cast<std::uint64_t>(m));
    auto exact = exact_entropy_gradient(model, space, beta);
    auto est = enumeration_weighted_estimator_gradient(model, space, beta);
    dev = std::max(dev, max_elementwise_deviation(exact, est));
    ++rep.cases;
  }
  // beta = 0 switches the term off entirely.
  auto model = PolicyModelT<T>::init(detail::oracle_lm_config(space.vocab_size), seed + 9999);
  auto zero = exact_entropy_gradient(model, space, 0.0);
  for (const auto& [_, g] : zero) {
    for (std::int64_t i = 0; i < g.numel(); ++i) dev = std::max(dev, std::abs(static_cast<double>(g[i])));
  }
  ++rep.cases;
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// Monte-Carlo convergence: the sampled two-part estimator approaches the
// exact gradient as the batch grows (median L2 error over repetitions).
template <typename T = double>
OracleReport check_entropy_sampling(std::uint64_t seed, double beta = 0.05,
                                    std::vector<std::int64_t> sizes = {100, 1000, 10000},
                                    std::int64_t reps = 20) {
  OracleReport rep;
  rep.claim = "entropy_sampling";
  rep.description = "sampled estimator error shrinks as the sample batch grows 10x";
  rep.tolerance = 0.0;  // medians must be non-increasing
  EnumerationSpace space;
  auto model = PolicyModelT<T>::init(detail::oracle_lm_config(space.vocab_size), seed + 4242);
  const auto exact = exact_entropy_gradient(model, space, beta);
  double exact_norm = 0;
  for (const auto& [_, g] : exact) {
    for (std::int64_t i = 0; i < g.numel(); ++i) exact_norm += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  exact_norm = std::sqrt(exact_norm);

  Rng rng(seed + 777);
  std::vector<double> medians;
  for (std::int64_t b : sizes) {
    std::vector<double> errs;
    for (std::int64_t r = 0; r < reps; ++r) {
      auto rows = detail::sample_fixed_length_batch(model, space, b, rng);
      auto batch = enumeration_batch<T>(space, rows);
      TapeT<T> tape;
      auto bound = bind(tape, model);
      EntropyBonusConfig cfg{beta, true};
      auto bonus = entropy_bonus(tape, bound, batch, cfg);
      tape.backward(bonus.loss_term);  // gradient of the NEGATED bonus
      auto grads = gradient_map(bound.leaves);
      double err = 0;
      for (const auto& [name, g] : grads) {
        const auto& ge = exact.at(name);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const double d = -static_cast<double>(g[i]) - static_cast<double>(ge[i]);
          err += d * d;
        }
      }
      errs.push_back(std::sqrt(err) / std::max(exact_norm, 1e-300));
      ++rep.cases;
    }
    std::sort(errs.begin(), errs.end());
    medians.push_back(errs[errs.size() / 2]);
    rep.details.push_back("batch " + std::to_string(b) +
                          ": median relative L2 error = " + std::to_string(errs[errs.size() / 2]));
  }
  double dev = -1e300;
  for (std::size_t i = 1; i < medians.size(); ++i) {
    dev = std::max(dev, medians[i] - medians[i - 1]);
  }
  rep.deviation = dev;
  rep.finalize();
  return rep;
}

// ---- registry / runner ----

struct ClaimInfo {
  std::string id;
  std::string description;
};

inline const std::vector<ClaimInfo>& claim_registry() {
  static const std::vector<ClaimInfo> claims = {
      {"lemma1", "logsumexp shift identity and sandwich bounds"},
      {"theorem1", "implicit preference gradient of the two-sample logsumexp objective"},
      {"jensen", "marginal objective upper-bounds the weighted log-weight sum"},
      {"normalization", "enumerated completion probabilities sum to one"},
      {"entropy_decomposition", "sequence entropy equals prefix-weighted per-step entropies"},
      {"entropy_gradient", "two-part estimator reproduces the exact entropy gradient"},
      {"entropy_sampling", "sampled estimator converges with batch size"},
  };
  return claims;
}

inline std::vector<OracleReport> run_oracles(const OracleOptions& opts,
                                             const std::vector<std::string>& filter = {}) {
  auto wanted = [&](const std::string& id) {
    return filter.empty() || std::find(filter.begin(), filter.end(), id) != filter.end();
  };
  for (const auto& f : filter) {
    const auto& reg = claim_registry();
    if (std::none_of(reg.begin(), reg.end(), [&](const ClaimInfo& c) { return c.id == f; })) {
      throw std::invalid_argument("unknown claim id '" + f + "'");
    }
  }
  std::vector<OracleReport> out;
  if (wanted("lemma1")) out.push_back(check_lemma1(opts.seed));
  if (wanted("theorem1")) {
    out.push_back(check_theorem1_gradient(opts.seed, {0.01, 0.05, 0.5}, 20,
                                          opts.inject_theorem1_sign_flip));
  }
  if (wanted("jensen")) out.push_back(check_jensen_bound(opts.seed));
  if (wanted("normalization")) out.push_back(check_eq2_normalization(opts.seed));
  if (wanted("entropy_decomposition")) out.push_back(check_entropy_decomposition(opts.seed));
  if (wanted("entropy_gradient")) out.push_back(check_entropy_gradient(opts.seed));
  if (wanted("entropy_sampling")) out.push_back(check_entropy_sampling(opts.seed));
  return out;
}

}  // namespace mmpo
