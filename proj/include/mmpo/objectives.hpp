// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmpo/autodiff.hpp"
#include "mmpo/numerics.hpp"
#include "mmpo/tensor.hpp"

namespace mmpo {

enum class Method { MMPO, DPO, SimPO };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::MMPO: return "mmpo";
    case Method::DPO: return "dpo";
    case Method::SimPO: return "simpo";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  if (s == "mmpo") return Method::MMPO;
  if (s == "dpo") return Method::DPO;
  if (s == "simpo") return Method::SimPO;
  throw std::invalid_argument("unknown method '" + s + "' (expected mmpo|dpo|simpo)");
}

struct ObjectiveConfig {
  Method method = Method::MMPO;
  double beta = 0.05;
  double reward_epsilon = 0.9;     // target margin added to the chosen-side reward
  double rejected_baseline = 0.1;  // constant on the rejected-side reward
  double norm_epsilon = 1e-6;      // ep in the min-max normalization
  double gamma_over_beta = 1.6;    // SimPO margin, expressed as gamma / beta

  // Ablation switches.
  bool no_aux_loss = false;
  bool no_in_batch_norm = false;
  bool length_normalize = false;
  bool entropy_max = false;  // entropy bonus with coefficient beta; MMPO only

  void validate() const {
    if (beta < 0) throw std::invalid_argument("ObjectiveConfig: beta must be >= 0");
    if (norm_epsilon <= 0) throw std::invalid_argument("ObjectiveConfig: norm_epsilon must be > 0");
    if (entropy_max && method != Method::MMPO) {
      throw std::invalid_argument("ObjectiveConfig: entropy_max is only valid with method=mmpo");
    }
  }

  // SimPO scores are per-token averages by definition.
  bool wants_length_normalized_logps() const {
    return length_normalize || method == Method::SimPO;
  }
};

// Scores with their decomposition: s = policy term + reward term on each side.
struct ScoredPair {
  double s_w = 0, s_l = 0;
  double w_policy = 0, w_reward = 0;
  double l_policy = 0, l_reward = 0;
};

inline double reward_accuracy(const std::vector<ScoredPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("reward_accuracy: empty input");
  std::int64_t wins = 0;
  for (const auto& p : pairs) {
    if (p.s_w > p.s_l) ++wins;  // ties count as failures
  }
  return static_cast<double>(wins) / static_cast<double>(pairs.size());
}

template <typename T>
struct BatchLossOutputT {
  // Graph handles, valid only while the tape that built them is alive.
  VarT<T> loss_mean;    // scalar
  VarT<T> per_example;  // [B]
  // Plain copies that outlive the tape.
  TensorT<T> per_example_values;
  double loss_value = 0;
  std::vector<ScoredPair> pairs;
  double mean_s_w = 0, mean_s_l = 0, mean_margin = 0;
  double accuracy = 0;
};

using BatchLossOutput = BatchLossOutputT<double>;

// Min-max rescaling of reward terms over the concatenation of both sides of
// a mini-batch. The constants m, M are plain values (detached): in this
// objective the rewards derive only from frozen-reference quantities.
// Degenerate batches with min == max map every reward to exactly 1.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> in_batch_normalize(const std::vector<T>& chosen_rs,
                                                             const std::vector<T>& rejected_rs,
                                                             T ep) {
  if (chosen_rs.empty() || chosen_rs.size() != rejected_rs.size()) {
    throw std::invalid_argument("in_batch_normalize: vectors must be nonempty and equal length");
  }
  if (ep <= T(0)) throw std::invalid_argument("in_batch_normalize: ep must be > 0");
  T lo = chosen_rs[0], hi = chosen_rs[0];
  for (const auto* vec : {&chosen_rs, &rejected_rs}) {
    for (T v : *vec) {
      if (!std::isfinite(v)) throw numeric_error("in_batch_normalize: non-finite reward");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const T denom = hi + ep - lo;
  auto rescale = [&](const std::vector<T>& in) {
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] + ep - lo) / denom;
    return out;
  };
  return {rescale(chosen_rs), rescale(rejected_rs)};
}

namespace detail {

template <typename T>
void require_equal_lengths(std::initializer_list<const VarT<T>*> vars,
                           std::initializer_list<const std::vector<T>*> vecs) {
  std::int64_t n = -1;
  for (const auto* v : vars) {
    const auto& sh = v->shape();
    if (sh.size() != 1) throw std::invalid_argument("loss: log-prob inputs must be rank-1 vectors");
    if (n < 0) n = sh[0];
    if (sh[0] != n) throw std::invalid_argument("loss: input length mismatch");
  }
  for (const auto* v : vecs) {
    if (static_cast<std::int64_t>(v->size()) != n) {
      throw std::invalid_argument("loss: reference vector length mismatch");
    }
  }
  if (n < 1) throw std::invalid_argument("loss: empty batch");
}

template <typename T>
void fill_diagnostics(BatchLossOutputT<T>& out) {
  out.per_example_values = out.per_example.value();
  out.loss_value = out.loss_mean.value().item();
  double sw = 0, sl = 0;
  for (const auto& p : out.pairs) {
    sw += p.s_w;
    sl += p.s_l;
  }
  const double n = static_cast<double>(out.pairs.size());
  out.mean_s_w = sw / n;
  out.mean_s_l = sl / n;
  out.mean_margin = out.mean_s_w - out.mean_s_l;
  out.accuracy = reward_accuracy(out.pairs);
}

}  // namespace detail

// MMPO loss over a mini-batch.
//
//   chosen_r   = reward_epsilon    + beta * ref_chosen_logp
//   rejected_r = rejected_baseline + beta * ref_rejected_logp
//   (both min-max normalized in-batch unless no_in_batch_norm)
//   s_w = chosen_logp + chosen_r,  s_l = rejected_logp + rejected_r
//   loss_i = -logsumexp(s_w, s_l) - log sigma(s_w - s_l)
//
// The auxiliary log-sigmoid term is dropped under no_aux_loss. Under
// length_normalize the caller supplies per-token-average log-probs (policy
// and reference alike). An optional entropy term (already carrying its own
// sign and coefficient) is added to the scalar loss, not per example.
template <typename T>
BatchLossOutputT<T> mmpo_loss(TapeT<T>& tape, VarT<T> chosen_logps, VarT<T> rejected_logps,
                              const std::vector<T>& ref_chosen_logps,
                              const std::vector<T>& ref_rejected_logps,
                              const ObjectiveConfig& cfg,
                              std::optional<VarT<T>> entropy_term = std::nullopt) {
  cfg.validate();
  detail::require_equal_lengths<T>({&chosen_logps, &rejected_logps},
                                   {&ref_chosen_logps, &ref_rejected_logps});
  const std::size_t n = ref_chosen_logps.size();

  std::vector<T> chosen_r(n), rejected_r(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ref_chosen_logps[i]) || !std::isfinite(ref_rejected_logps[i])) {
      throw numeric_error("mmpo_loss: non-finite reference log-prob");
    }
    chosen_r[i] = static_cast<T>(cfg.reward_epsilon) + static_cast<T>(cfg.beta) * ref_chosen_logps[i];
    rejected_r[i] =
        static_cast<T>(cfg.rejected_baseline) + static_cast<T>(cfg.beta) * ref_rejected_logps[i];
  }
  if (!cfg.no_in_batch_norm) {
    auto normed = in_batch_normalize<T>(chosen_r, rejected_r, static_cast<T>(cfg.norm_epsilon));
    chosen_r = std::move(normed.first);
    rejected_r = std::move(normed.second);
  }

  const std::int64_t b = static_cast<std::int64_t>(n);
  auto s_w = tape.add(chosen_logps, tape.constant(TensorT<T>({b}, chosen_r)));
  auto s_l = tape.add(rejected_logps, tape.constant(TensorT<T>({b}, rejected_r)));

  auto per_example = tape.neg(tape.logaddexp(s_w, s_l));
  if (!cfg.no_aux_loss) {
    per_example = tape.sub(per_example, tape.log_sigmoid_(tape.sub(s_w, s_l)));
  }

  BatchLossOutputT<T> out;
  out.per_example = per_example;
  out.loss_mean = tape.mean_all(per_example);
  if (entropy_term) {
    out.loss_mean = tape.add(out.loss_mean, *entropy_term);
  }
  out.pairs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ScoredPair& p = out.pairs[i];
    p.w_policy = static_cast<double>(chosen_logps.value()[static_cast<std::int64_t>(i)]);
    p.l_policy = static_cast<double>(rejected_logps.value()[static_cast<std::int64_t>(i)]);
    p.w_reward = static_cast<double>(chosen_r[i]);
    p.l_reward = static_cast<double>(rejected_r[i]);
    p.s_w = static_cast<double>(s_w.value()[static_cast<std::int64_t>(i)]);
    p.s_l = static_cast<double>(s_l.value()[static_cast<std::int64_t>(i)]);
  }
  detail::fill_diagnostics(out);
  return out;
}

// DPO: loss_i = -log sigma(beta * ((logp_w - ref_w) - (logp_l - ref_l))).
// Reward-accuracy scoring uses beta * (logp - ref_logp) per side.
template <typename T>
BatchLossOutputT<T> dpo_loss(TapeT<T>& tape, VarT<T> chosen_logps, VarT<T> rejected_logps,
                             const std::vector<T>& ref_chosen_logps,
                             const std::vector<T>& ref_rejected_logps, double beta) {
  if (beta < 0) throw std::invalid_argument("dpo_loss: beta must be >= 0");
  detail::require_equal_lengths<T>({&chosen_logps, &rejected_logps},
                                   {&ref_chosen_logps, &ref_rejected_logps});
  const std::size_t n = ref_chosen_logps.size();
  const std::int64_t b = static_cast<std::int64_t>(n);

  std::vector<T> neg_ref_w(n), neg_ref_l(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ref_chosen_logps[i]) || !std::isfinite(ref_rejected_logps[i])) {
      throw numeric_error("dpo_loss: non-finite reference log-prob");
    }
    neg_ref_w[i] = -static_cast<T>(beta) * ref_chosen_logps[i];
    neg_ref_l[i] = -static_cast<T>(beta) * ref_rejected_logps[i];
  }
  auto s_w = tape.add(tape.scale(chosen_logps, static_cast<T>(beta)),
                      tape.constant(TensorT<T>({b}, neg_ref_w)));
  auto s_l = tape.add(tape.scale(rejected_logps, static_cast<T>(beta)),
                      tape.constant(TensorT<T>({b}, neg_ref_l)));
  auto per_example = tape.neg(tape.log_sigmoid_(tape.sub(s_w, s_l)));

  BatchLossOutputT<T> out;
  out.per_example = per_example;
  out.loss_mean = tape.mean_all(per_example);
  out.pairs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ScoredPair& p = out.pairs[i];
    const auto idx = static_cast<std::int64_t>(i);
    p.w_policy = beta * static_cast<double>(chosen_logps.value()[idx]);
    p.l_policy = beta * static_cast<double>(rejected_logps.value()[idx]);
    p.w_reward = static_cast<double>(neg_ref_w[i]);
    p.l_reward = static_cast<double>(neg_ref_l[i]);
    p.s_w = static_cast<double>(s_w.value()[idx]);
    p.s_l = static_cast<double>(s_l.value()[idx]);
  }
  detail::fill_diagnostics(out);
  return out;
}

// SimPO: loss_i = -log sigma(beta * logp_w - beta * logp_l - gamma), with
// gamma = beta * gamma_over_beta; inputs must be per-token averages.
template <typename T>
BatchLossOutputT<T> simpo_loss(TapeT<T>& tape, VarT<T> chosen_logps, VarT<T> rejected_logps,
                               double beta, double gamma_over_beta) {
  if (beta < 0) throw std::invalid_argument("simpo_loss: beta must be >= 0");
  detail::require_equal_lengths<T>({&chosen_logps, &rejected_logps}, {});
  const std::int64_t b = chosen_logps.shape()[0];
  const T gamma = static_cast<T>(beta * gamma_over_beta);

  auto s_w = tape.scale(chosen_logps, static_cast<T>(beta));
  auto s_l = tape.scale(rejected_logps, static_cast<T>(beta));
  auto margin = tape.add_scalar(tape.sub(s_w, s_l), -gamma);
  auto per_example = tape.neg(tape.log_sigmoid_(margin));

  BatchLossOutputT<T> out;
  out.per_example = per_example;
  out.loss_mean = tape.mean_all(per_example);
  out.pairs.resize(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    ScoredPair& p = out.pairs[static_cast<std::size_t>(i)];
    p.w_policy = static_cast<double>(s_w.value()[i]);
    p.l_policy = static_cast<double>(s_l.value()[i]);
    p.w_reward = 0;
    p.l_reward = 0;
    p.s_w = p.w_policy;
    p.s_l = p.l_policy;
  }
  detail::fill_diagnostics(out);
  return out;
}

// Dispatch on cfg.method with a uniform signature (SimPO ignores the refs).
template <typename T>
BatchLossOutputT<T> preference_loss(TapeT<T>& tape, VarT<T> chosen_logps, VarT<T> rejected_logps,
                                    const std::vector<T>& ref_chosen_logps,
                                    const std::vector<T>& ref_rejected_logps,
                                    const ObjectiveConfig& cfg,
                                    std::optional<VarT<T>> entropy_term = std::nullopt) {
  switch (cfg.method) {
    case Method::MMPO:
      return mmpo_loss(tape, chosen_logps, rejected_logps, ref_chosen_logps, ref_rejected_logps,
                       cfg, entropy_term);
    case Method::DPO:
      return dpo_loss(tape, chosen_logps, rejected_logps, ref_chosen_logps, ref_rejected_logps,
                      cfg.beta);
    case Method::SimPO:
      return simpo_loss(tape, chosen_logps, rejected_logps, cfg.beta, cfg.gamma_over_beta);
  }
  throw std::invalid_argument("preference_loss: bad method");
}

// Value-level evaluation on plain vectors (builds a throwaway graph).
template <typename T>
BatchLossOutputT<T> evaluate_loss(const std::vector<T>& chosen_logps,
                                  const std::vector<T>& rejected_logps,
                                  const std::vector<T>& ref_chosen_logps,
                                  const std::vector<T>& ref_rejected_logps,
                                  const ObjectiveConfig& cfg) {
  if (chosen_logps.empty() || chosen_logps.size() != rejected_logps.size()) {
    throw std::invalid_argument("evaluate_loss: vectors must be nonempty and equal length");
  }
  TapeT<T> tape;
  const std::int64_t b = static_cast<std::int64_t>(chosen_logps.size());
  auto cl = tape.constant(TensorT<T>({b}, chosen_logps));
  auto rl = tape.constant(TensorT<T>({b}, rejected_logps));
  auto out = preference_loss(tape, cl, rl, ref_chosen_logps, ref_rejected_logps, cfg);
  // The tape dies with this frame; only the value copies stay meaningful.
  out.loss_mean = VarT<T>();
  out.per_example = VarT<T>();
  return out;
}

}  // namespace mmpo
