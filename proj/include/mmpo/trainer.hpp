// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mmpo/checkpoint.hpp"
#include "mmpo/data.hpp"
#include "mmpo/entropy.hpp"
#include "mmpo/model.hpp"
#include "mmpo/objectives.hpp"
#include "mmpo/rng.hpp"

namespace mmpo {

// Linear warmup to base_lr over ceil(warmup_fraction * total) steps, then
// cosine decay to exactly 0 at total_steps.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double warmup_fraction,
                        double base_lr) {
  if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("cosine_lr: step out of [0, total_steps]");
  }
  if (warmup_fraction < 0 || warmup_fraction >= 1) {
    throw std::invalid_argument("cosine_lr: warmup_fraction must be in [0, 1)");
  }
  const auto warmup = static_cast<std::int64_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step == total_steps) return 0.0;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct MetricRecord {
  std::uint64_t step = 0;
  std::int64_t epoch = 0;
  double loss = 0;
  double reward_accuracy = 0;
  double mean_s_w = 0;
  double mean_s_l = 0;
  double lr = 0;
  std::string split = "train";

  nlohmann::json to_json() const {
    return nlohmann::json{{"epoch", epoch},
                          {"loss", loss},
                          {"lr", lr},
                          {"mean_s_l", mean_s_l},
                          {"mean_s_w", mean_s_w},
                          {"reward_accuracy", reward_accuracy},
                          {"split", split},
                          {"step", step}};
  }

  static MetricRecord from_json(const nlohmann::json& j) {
    MetricRecord r;
    r.step = j.at("step").get<std::uint64_t>();
    r.epoch = j.at("epoch").get<std::int64_t>();
    r.loss = j.at("loss").get<double>();
    r.reward_accuracy = j.at("reward_accuracy").get<double>();
    r.mean_s_w = j.at("mean_s_w").get<double>();
    r.mean_s_l = j.at("mean_s_l").get<double>();
    r.lr = j.at("lr").get<double>();
    r.split = j.value("split", "train");
    return r;
  }
};

struct TrainState {
  std::uint64_t step = 0;  // completed optimizer updates
  std::map<std::string, Tensor> moment1;
  std::map<std::string, Tensor> moment2;
  std::vector<MetricRecord> history;
};

// Decoupled-weight-decay adaptive update with bias correction. Validates
// every gradient before touching any state, so a bad step leaves parameters
// and moments unchanged.
inline void optimizer_step(TrainState& state, std::map<std::string, Tensor>& params,
                           const std::map<std::string, Tensor>& grads, double lr,
                           const AdamConfig& cfg) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end() || it->second.shape() != p.shape()) {
      throw std::invalid_argument("optimizer_step: gradient missing or misshapen for " + name);
    }
    if (!it->second.all_finite()) {
      throw numeric_error("optimizer_step: non-finite gradient for " + name + "; step aborted");
    }
  }
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto m_it = state.moment1.find(name);
    if (m_it == state.moment1.end()) {
      m_it = state.moment1.emplace(name, Tensor::zeros(p.shape())).first;
      state.moment2.emplace(name, Tensor::zeros(p.shape()));
    }
    Tensor& m = m_it->second;
    Tensor& v = state.moment2.at(name);
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] = p[i] * (1.0 - lr * cfg.weight_decay) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  state.step = t;
}

// Scales grads in place when their global L2 norm exceeds max_norm (<= 0
// disables clipping); returns the pre-clip norm.
inline double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [_, g] : grads) {
    for (std::int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

struct TrainConfig {
  ObjectiveConfig objective;
  double base_lr = 5e-4;
  AdamConfig adam;  // weight_decay lives here
  std::int64_t epochs = 3;
  // Stop after this many epochs while keeping the full-epochs schedule
  // horizon (for interrupt/resume); 0 means run to `epochs`.
  std::int64_t stop_epoch = 0;
  std::int64_t per_step_batch = 8;
  std::int64_t grad_accum_steps = 4;
  double warmup_fraction = 0.10;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoints written
  std::int64_t max_prompt_len = 32;
  std::int64_t max_completion_len = 32;
  std::int64_t eval_batch = 64;

  std::int64_t effective_batch() const { return per_step_batch * grad_accum_steps; }

  void validate() const {
    objective.validate();
    // base_lr 0 is allowed as a degenerate no-op run
    if (base_lr < 0) throw std::invalid_argument("TrainConfig: base_lr must be >= 0");
    if (adam.weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (stop_epoch < 0 || stop_epoch > epochs) {
      throw std::invalid_argument("TrainConfig: stop_epoch must be in [0, epochs]");
    }
    if (per_step_batch < 1 || grad_accum_steps < 1) {
      throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
    }
    if (warmup_fraction < 0 || warmup_fraction >= 1) {
      throw std::invalid_argument("TrainConfig: warmup_fraction must be in [0, 1)");
    }
    if (max_prompt_len < 0 || max_completion_len < 1) {
      throw std::invalid_argument("TrainConfig: bad truncation limits");
    }
  }
};

struct TrainResult {
  std::vector<MetricRecord> history;
  std::vector<std::string> checkpoint_paths;
  double final_val_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::int64_t skipped_examples = 0;
};

namespace detail {

struct PreparedDataset {
  std::vector<TokenizedRow> chosen;
  std::vector<TokenizedRow> rejected;
  std::vector<double> ref_chosen;    // per the objective's normalization convention
  std::vector<double> ref_rejected;
  std::int64_t skipped = 0;
};

template <typename T>
std::vector<double> batched_sequence_logps(const PolicyModelT<T>& model,
                                           const std::vector<TokenizedRow>& rows,
                                           bool length_normalized, std::int64_t batch_size) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<TokenizedRow> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                    rows.begin() + static_cast<std::ptrdiff_t>(end));
    auto batch = batch_from_rows<T>(chunk);
    TensorT<T> lp = sequence_log_prob(model, batch, length_normalized);
    for (std::int64_t i = 0; i < lp.numel(); ++i) out.push_back(static_cast<double>(lp[i]));
  }
  return out;
}

inline PreparedDataset prepare_dataset(const std::vector<PreferenceTriple>& triples,
                                       const Tokenizer& tok, const TrainConfig& cfg,
                                       const PolicyModel& ref) {
  PreparedDataset prep;
  for (const auto& t : triples) {
    t.validate();
    TokenizedRow c = tokenize_example(tok, t.prompt, t.chosen, cfg.max_prompt_len,
                                      cfg.max_completion_len);
    TokenizedRow r = tokenize_example(tok, t.prompt, t.rejected, cfg.max_prompt_len,
                                      cfg.max_completion_len);
    if (!completion_survives(c) || !completion_survives(r)) {
      ++prep.skipped;
      continue;
    }
    prep.chosen.push_back(std::move(c));
    prep.rejected.push_back(std::move(r));
  }
  if (prep.chosen.empty()) {
    throw std::invalid_argument("train: no usable examples after truncation");
  }
  const bool norm = cfg.objective.wants_length_normalized_logps();
  prep.ref_chosen = batched_sequence_logps(ref, prep.chosen, norm, cfg.eval_batch);
  prep.ref_rejected = batched_sequence_logps(ref, prep.rejected, norm, cfg.eval_batch);
  return prep;
}

inline Rng epoch_rng(std::uint64_t seed, std::int64_t epoch) {
  return Rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch + 1)));
}

}  // namespace detail

struct EvalMetrics {
  double loss = 0;
  double reward_accuracy = 0;
  double mean_s_w = 0;
  double mean_s_l = 0;
  std::int64_t examples = 0;
};

// Validation-style scoring: batches of eval_batch examples, each batch
// normalized independently (mirrors the training-time coupling).
inline EvalMetrics evaluate_preference(const PolicyModel& policy, const PolicyModel& ref,
                                       const std::vector<PreferenceTriple>& triples,
                                       const Tokenizer& tok, const TrainConfig& cfg) {
  if (triples.empty()) throw std::invalid_argument("evaluate_preference: empty dataset");
  detail::PreparedDataset prep = detail::prepare_dataset(triples, tok, cfg, ref);
  const bool norm = cfg.objective.wants_length_normalized_logps();
  const auto policy_c = detail::batched_sequence_logps(policy, prep.chosen, norm, cfg.eval_batch);
  const auto policy_r = detail::batched_sequence_logps(policy, prep.rejected, norm, cfg.eval_batch);

  EvalMetrics out;
  double loss_sum = 0, sw_sum = 0, sl_sum = 0;
  std::int64_t wins = 0;
  const std::size_t n = policy_c.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.eval_batch)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.eval_batch));
    auto slice = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(start),
                                 v.begin() + static_cast<std::ptrdiff_t>(end));
    };
    auto res = evaluate_loss<double>(slice(policy_c), slice(policy_r), slice(prep.ref_chosen),
                                     slice(prep.ref_rejected), cfg.objective);
    for (const auto& p : res.pairs) {
      sw_sum += p.s_w;
      sl_sum += p.s_l;
      if (p.s_w > p.s_l) ++wins;
    }
    const auto& pe = res.per_example_values;
    for (std::int64_t i = 0; i < pe.numel(); ++i) loss_sum += pe[i];
    out.examples += static_cast<std::int64_t>(end - start);
  }
  out.loss = loss_sum / static_cast<double>(out.examples);
  out.reward_accuracy = static_cast<double>(wins) / static_cast<double>(out.examples);
  out.mean_s_w = sw_sum / static_cast<double>(out.examples);
  out.mean_s_l = sl_sum / static_cast<double>(out.examples);
  return out;
}

// The preference-optimization loop: frozen reference, gradient accumulation
// with micro-batch loss averaging, global-norm clipping, cosine schedule,
// per-epoch validation and checkpointing. Fully deterministic per seed.
//
// The reference defaults to a frozen copy of the incoming model (the state
// before the first step). Resumed runs must pass the original reference
// explicitly, together with the state loaded from the checkpoint; the resume
// point is the epoch boundary the state's step count implies.
inline TrainResult train(const TrainConfig& cfg, const std::vector<PreferenceTriple>& train_set,
                         const std::vector<PreferenceTriple>& val_set, const Tokenizer& tok,
                         PolicyModel& model, const PolicyModel* reference = nullptr,
                         TrainState* state_io = nullptr,
                         const std::function<void(const MetricRecord&)>& on_metric = {}) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  if (model.frozen) throw std::invalid_argument("train: model is frozen");
  if (state_io && state_io->step > 0 && !reference) {
    throw std::invalid_argument("train: resuming requires the original reference model");
  }
  if (reference && !(reference->config == model.config)) {
    throw std::invalid_argument("train: reference/model config mismatch");
  }

  PolicyModel ref = reference ? *reference : model;
  ref.frozen = true;
  detail::PreparedDataset prep = detail::prepare_dataset(train_set, tok, cfg, ref);
  const bool length_norm = cfg.objective.wants_length_normalized_logps();

  const std::int64_t n = static_cast<std::int64_t>(prep.chosen.size());
  const std::int64_t eff = cfg.effective_batch();
  const std::int64_t steps_per_epoch = (n + eff - 1) / eff;
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

  TrainState local_state;
  TrainState& state = state_io ? *state_io : local_state;
  std::int64_t start_epoch = 0;
  if (state.step > 0) {
    if (state.step % static_cast<std::uint64_t>(steps_per_epoch) != 0) {
      throw std::invalid_argument("train: resume step must sit on an epoch boundary");
    }
    start_epoch = static_cast<std::int64_t>(state.step) / steps_per_epoch;
  }

  TrainResult result;
  result.skipped_examples = prep.skipped;

  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
  }

  auto emit = [&](const MetricRecord& rec) {
    state.history.push_back(rec);
    result.history.push_back(rec);
    if (on_metric) on_metric(rec);
  };

  const std::int64_t stop_at = cfg.stop_epoch > 0 ? cfg.stop_epoch : cfg.epochs;
  for (std::int64_t epoch = start_epoch; epoch < stop_at; ++epoch) {
    // Seed-derived permutation, independent per epoch (stateless for resume).
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng perm = detail::epoch_rng(cfg.seed, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(perm.uniform_int(i))]);
    }

    for (std::int64_t step_in_epoch = 0; step_in_epoch < steps_per_epoch; ++step_in_epoch) {
      const std::int64_t base = step_in_epoch * eff;
      const std::int64_t batch_n = std::min(eff, n - base);

      std::map<std::string, Tensor> grad_store;
      for (const auto& [name, p] : model.params) grad_store.emplace(name, Tensor::zeros(p.shape()));

      double loss_acc = 0;
      std::vector<ScoredPair> step_pairs;
      const std::int64_t micros = (batch_n + cfg.per_step_batch - 1) / cfg.per_step_batch;
      for (std::int64_t micro = 0; micro < micros; ++micro) {
        const std::int64_t mb_base = base + micro * cfg.per_step_batch;
        const std::int64_t m = std::min(cfg.per_step_batch, base + batch_n - mb_base);

        std::vector<TokenizedRow> rows;
        std::vector<double> ref_c(static_cast<std::size_t>(m)), ref_r(static_cast<std::size_t>(m));
        rows.reserve(static_cast<std::size_t>(2 * m));
        for (std::int64_t i = 0; i < m; ++i) {
          const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(mb_base + i)]);
          rows.push_back(prep.chosen[idx]);
          ref_c[static_cast<std::size_t>(i)] = prep.ref_chosen[idx];
          ref_r[static_cast<std::size_t>(i)] = prep.ref_rejected[idx];
        }
        for (std::int64_t i = 0; i < m; ++i) {
          const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(mb_base + i)]);
          rows.push_back(prep.rejected[idx]);
        }

        Tape tape;
        auto bound = bind(tape, model);
        auto batch = batch_from_rows<double>(rows);
        auto outs = score_sequences(tape, bound, batch, length_norm);
        auto chosen_lp = tape.slice(outs.seq_logps, 0, 0, m);
        auto rejected_lp = tape.slice(outs.seq_logps, 0, m, m);

        std::optional<Var> entropy_term;
        if (cfg.objective.entropy_max) {
          EntropyBonusConfig ecfg{cfg.objective.beta, true};
          entropy_term = entropy_surrogate(tape, outs, ecfg).loss_term;
        }
        auto loss = preference_loss(tape, chosen_lp, rejected_lp, ref_c, ref_r, cfg.objective,
                                    entropy_term);
        tape.backward(tape.scale(loss.loss_mean, 1.0 / static_cast<double>(micros)));

        for (auto& [name, g] : grad_store) {
          const Tensor& leaf_grad = bound.at(name).grad();
          for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += leaf_grad[i];
        }
        loss_acc += loss.loss_mean.value()[0] / static_cast<double>(micros);
        step_pairs.insert(step_pairs.end(), loss.pairs.begin(), loss.pairs.end());
      }

      clip_global_norm(grad_store, cfg.clip_norm);
      const double lr = cosine_lr(static_cast<std::int64_t>(state.step), total_steps,
                                  cfg.warmup_fraction, cfg.base_lr);
      optimizer_step(state, model.params, grad_store, lr, cfg.adam);

      MetricRecord rec;
      rec.step = state.step;
      rec.epoch = epoch + 1;
      rec.loss = loss_acc;
      rec.reward_accuracy = reward_accuracy(step_pairs);
      double sw = 0, sl = 0;
      for (const auto& p : step_pairs) {
        sw += p.s_w;
        sl += p.s_l;
      }
      rec.mean_s_w = sw / static_cast<double>(step_pairs.size());
      rec.mean_s_l = sl / static_cast<double>(step_pairs.size());
      rec.lr = lr;
      emit(rec);
    }

    if (!val_set.empty()) {
      EvalMetrics em = evaluate_preference(model, ref, val_set, tok, cfg);
      MetricRecord rec;
      rec.step = state.step;
      rec.epoch = epoch + 1;
      rec.loss = em.loss;
      rec.reward_accuracy = em.reward_accuracy;
      rec.mean_s_w = em.mean_s_w;
      rec.mean_s_l = em.mean_s_l;
      rec.lr = cosine_lr(static_cast<std::int64_t>(state.step), total_steps, cfg.warmup_fraction,
                         cfg.base_lr);
      rec.split = "val";
      emit(rec);
      result.final_val_accuracy = em.reward_accuracy;
    }

    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint ckpt;
      ckpt.config = model.config;
      ckpt.params = model.params;
      ckpt.has_optimizer_state = true;
      ckpt.step = state.step;
      ckpt.moment1 = state.moment1;
      ckpt.moment2 = state.moment2;
      const std::string path =
          cfg.checkpoint_dir + "/ckpt_epoch_" + std::to_string(epoch + 1) + ".bin";
      save_checkpoint(path, ckpt);
      result.checkpoint_paths.push_back(path);
    }
  }
  return result;
}

inline TrainState train_state_from_checkpoint(const Checkpoint& ckpt) {
  TrainState s;
  if (!ckpt.has_optimizer_state) {
    throw std::invalid_argument("train_state_from_checkpoint: checkpoint has no optimizer state");
  }
  s.step = ckpt.step;
  s.moment1 = ckpt.moment1;
  s.moment2 = ckpt.moment2;
  return s;
}

// ---- supervised warm-up ----

struct SftConfig {
  double lr = 1e-3;
  AdamConfig adam;
  std::int64_t epochs = 1;
  std::int64_t batch = 16;
  double warmup_fraction = 0.10;
  double clip_norm = 1.0;
  std::uint64_t seed = 7;
  std::int64_t max_len = 64;  // row length budget incl. begin/end tokens

  void validate() const {
    if (lr <= 0 || epochs < 0 || batch < 1 || max_len < 4) {
      throw std::invalid_argument("SftConfig: invalid field");
    }
    if (warmup_fraction < 0 || warmup_fraction >= 1) {
      throw std::invalid_argument("SftConfig: warmup_fraction must be in [0, 1)");
    }
  }
};

// Next-token cross-entropy over every position after the begin token.
inline std::vector<MetricRecord> train_sft(const SftConfig& cfg,
                                           const std::vector<std::string>& lines,
                                           const Tokenizer& tok, PolicyModel& model) {
  cfg.validate();
  if (lines.empty()) throw std::invalid_argument("train_sft: empty corpus");

  std::vector<TokenizedRow> rows;
  rows.reserve(lines.size());
  for (const auto& line : lines) {
    if (line.empty()) continue;
    TokenizedRow row = tokenize_example(tok, "", line, 0, cfg.max_len - 2);
    if (completion_survives(row)) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("train_sft: no usable lines");

  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  const std::int64_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

  TrainState state;
  std::vector<MetricRecord> history;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng perm = detail::epoch_rng(cfg.seed, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(perm.uniform_int(i))]);
    }
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const std::int64_t base = s * cfg.batch;
      const std::int64_t m = std::min(cfg.batch, n - base);
      std::vector<TokenizedRow> chunk;
      chunk.reserve(static_cast<std::size_t>(m));
      for (std::int64_t i = 0; i < m; ++i) {
        chunk.push_back(rows[static_cast<std::size_t>(order[static_cast<std::size_t>(base + i)])]);
      }
      Tape tape;
      auto bound = bind(tape, model);
      auto batch = batch_from_rows<double>(chunk);
      auto outs = score_sequences(tape, bound, batch);
      double count = 0;
      for (std::int64_t i = 0; i < outs.completion_counts.numel(); ++i) {
        count += outs.completion_counts[i];
      }
      auto loss = tape.scale(tape.sum_all(outs.token_logps), -1.0 / count);
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, _] : model.params) grads.emplace(name, bound.at(name).grad());
      clip_global_norm(grads, cfg.clip_norm);
      const double lr = cosine_lr(static_cast<std::int64_t>(state.step), total_steps,
                                  cfg.warmup_fraction, cfg.lr);
      optimizer_step(state, model.params, grads, lr, cfg.adam);

      MetricRecord rec;
      rec.step = state.step;
      rec.epoch = epoch + 1;
      rec.loss = loss.value()[0];
      rec.lr = lr;
      rec.split = "sft";
      history.push_back(rec);
    }
  }
  return history;
}

}  // namespace mmpo
