// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>

#include "mmpo/autodiff.hpp"
#include "mmpo/model.hpp"

namespace mmpo {

struct EntropyBonusConfig {
  double coefficient = 0.0;             // beta when the ablation is active
  bool stop_gradient_weighting = true;  // include the score-function (P1) term

  void validate() const {
    if (coefficient < 0) throw std::invalid_argument("EntropyBonusConfig: coefficient must be >= 0");
  }
};

template <typename T>
struct EntropyBonusResultT {
  VarT<T> loss_term;        // scalar; negated bonus, coefficient applied
  VarT<T> entropies;        // [B,T] masked next-step entropies
  TensorT<T> p1_weights;    // [B,T] detached weights applied to token logps
  double mean_entropy = 0;  // per completion step, for diagnostics
};

// Builds the loss surrogate from already-computed forward outputs. The
// surrogate's gradient is the two-part per-step entropy estimator over the
// batch completions:
//   P2: direct differentiation of the per-step entropies;
//   P1: prefix log-probs weighted by detached per-step entropies
//       (score-function route; dropped when stop_gradient_weighting=false).
// Returns -coefficient * (P1 + P2) / B so that minimizing the training loss
// maximizes entropy. frozen_p1_weights pins the detached weights to values
// computed at a reference parameter point (used by gradient audits).
template <typename T>
EntropyBonusResultT<T> entropy_surrogate(TapeT<T>& tape, const LmOutputsT<T>& outs,
                                         const EntropyBonusConfig& cfg,
                                         const TensorT<T>* frozen_p1_weights = nullptr) {
  cfg.validate();
  const auto& sh = outs.token_logps.shape();
  const std::int64_t b = sh[0], t = sh[1];

  EntropyBonusResultT<T> out;
  auto mask = tape.constant(outs.slot_mask);
  out.entropies = tape.mul(tape.row_entropy(outs.logits), mask);  // [B,T]

  if (cfg.coefficient == 0.0) {
    out.loss_term = tape.constant(TensorT<T>::scalar(T(0)));
    out.p1_weights = TensorT<T>::zeros({b, t});
    return out;
  }

  auto surrogate = tape.sum_all(out.entropies);  // P2

  if (cfg.stop_gradient_weighting) {
    // Weight on token-logp slot k of row r: sum of detached entropies at
    // later completion steps, i.e. every step whose prefix contains the
    // token that slot k predicts.
    if (frozen_p1_weights) {
      out.p1_weights = *frozen_p1_weights;
    } else {
      const TensorT<T>& h = out.entropies.value();
      out.p1_weights = TensorT<T>::zeros({b, t});
      for (std::int64_t r = 0; r < b; ++r) {
        T tail = T(0);
        for (std::int64_t k = t - 1; k >= 0; --k) {
          out.p1_weights[r * t + k] = outs.slot_mask[r * t + k] * tail;
          tail += h[r * t + k];
        }
      }
    }
    auto p1 = tape.sum_all(tape.mul(outs.token_logps, tape.constant(out.p1_weights)));
    surrogate = tape.add(surrogate, p1);
  } else {
    out.p1_weights = TensorT<T>::zeros({b, t});
  }

  out.loss_term = tape.scale(surrogate, static_cast<T>(-cfg.coefficient) / static_cast<T>(b));

  T total_h = T(0), total_m = T(0);
  for (std::int64_t i = 0; i < b * t; ++i) {
    total_h += out.entropies.value()[i];
    total_m += outs.slot_mask[i];
  }
  out.mean_entropy = static_cast<double>(total_h / total_m);
  return out;
}

// Convenience entry point that runs its own forward pass.
template <typename T>
EntropyBonusResultT<T> entropy_bonus(TapeT<T>& tape, const BoundModelT<T>& bound,
                                     const SequenceBatchT<T>& batch,
                                     const EntropyBonusConfig& cfg,
                                     const TensorT<T>* frozen_p1_weights = nullptr) {
  auto outs = score_sequences(tape, bound, batch);
  return entropy_surrogate(tape, outs, cfg, frozen_p1_weights);
}

}  // namespace mmpo
