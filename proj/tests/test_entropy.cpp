// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mmpo/entropy.hpp"
#include "mmpo/oracles.hpp"

using namespace mmpo;

namespace {

LmConfig tiny_config(std::int64_t vocab = 3) {
  LmConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 12;
  return cfg;
}

std::map<std::string, Tensor> bonus_gradient(const PolicyModel& model, const SequenceBatch& batch,
                                             const EntropyBonusConfig& cfg) {
  Tape tape;
  auto bound = bind(tape, model);
  auto bonus = entropy_bonus(tape, bound, batch, cfg);
  tape.backward(bonus.loss_term);
  return gradient_map(bound.leaves);
}

}  // namespace

TEST(EntropyBonus, ZeroCoefficientContributesNothing) {
  auto model = PolicyModel::init(tiny_config(), 5);
  auto batch = SequenceBatch::from_rows({{0, 1, 2, 1}}, {1});
  Tape tape;
  auto bound = bind(tape, model);
  EntropyBonusConfig cfg{0.0, true};
  auto bonus = entropy_bonus(tape, bound, batch, cfg);
  EXPECT_DOUBLE_EQ(bonus.loss_term.value().item(), 0.0);
  tape.backward(bonus.loss_term);
  for (const auto& [name, g] : gradient_map(bound.leaves)) {
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      EXPECT_DOUBLE_EQ(g[i], 0.0) << name;
    }
  }
}

TEST(EntropyBonus, TwoPartAdditivity) {
  // full estimator minus the P2-only variant is exactly the P1 term
  auto model = PolicyModel::init(tiny_config(), 6);
  auto batch = SequenceBatch::from_rows({{0, 1, 2, 1}, {0, 2, 2, 0, 1}}, {1, 2});
  const EntropyBonusConfig full{0.05, true};
  const EntropyBonusConfig p2_only{0.05, false};

  auto g_full = bonus_gradient(model, batch, full);
  auto g_p2 = bonus_gradient(model, batch, p2_only);

  // P1 alone: token logps weighted by the (detached) later-step entropies
  Tape tape;
  auto bound = bind(tape, model);
  auto outs = score_sequences(tape, bound, batch);
  auto probe = entropy_surrogate(tape, outs, full);
  auto p1 = tape.scale(
      tape.sum_all(tape.mul(outs.token_logps, tape.constant(probe.p1_weights))),
      -full.coefficient / static_cast<double>(batch.batch_size()));
  tape.backward(p1);
  auto g_p1 = gradient_map(bound.leaves);

  for (const auto& [name, gf] : g_full) {
    const auto& g2 = g_p2.at(name);
    const auto& g1 = g_p1.at(name);
    for (std::int64_t i = 0; i < gf.numel(); ++i) {
      EXPECT_NEAR(gf[i], g2[i] + g1[i], 1e-12) << name << "[" << i << "]";
    }
  }
}

TEST(EntropyBonus, MatchesExactGradientUnderEnumerationWeighting) {
  EnumerationSpace space;
  auto model = PolicyModel::init(tiny_config(space.vocab_size), 11);
  auto exact = exact_entropy_gradient(model, space, 0.05);
  auto est = enumeration_weighted_estimator_gradient(model, space, 0.05);
  EXPECT_LE(max_elementwise_deviation(exact, est), 1e-8);
}

TEST(EntropyBonus, UniformPolicyIsStationary) {
  // all-zero parameters -> exactly uniform next-token distributions; the
  // sequence entropy is maximal there, so its exact gradient vanishes
  EnumerationSpace space;
  PolicyModel model = PolicyModel::init(tiny_config(space.vocab_size), 1);
  for (auto& [_, t] : model.params) {
    for (auto& v : t.data()) v = 0.0;
  }
  auto est = enumeration_weighted_estimator_gradient(model, space, 0.05);
  double max_norm = 0;
  for (const auto& [_, g] : est) {
    for (std::int64_t i = 0; i < g.numel(); ++i) max_norm = std::max(max_norm, std::abs(g[i]));
  }
  EXPECT_LE(max_norm, 1e-8);
}

TEST(EntropyBonus, DegenerateDistributionsStayFinite) {
  auto model = PolicyModel::init(tiny_config(5), 2);
  model.params.at("head.b")[0] = 1e4;  // near one-hot everywhere
  auto batch = SequenceBatch::from_rows({{0, 1, 2, 3}}, {1});
  Tape tape;
  auto bound = bind(tape, model);
  EntropyBonusConfig cfg{0.05, true};
  auto bonus = entropy_bonus(tape, bound, batch, cfg);
  EXPECT_TRUE(std::isfinite(bonus.loss_term.value().item()));
  tape.backward(bonus.loss_term);
  for (const auto& [_, g] : gradient_map(bound.leaves)) {
    EXPECT_TRUE(g.all_finite());
  }
}

TEST(EntropyBonus, FrozenWeightsPinTheP1Term) {
  auto model = PolicyModel::init(tiny_config(), 13);
  auto batch = SequenceBatch::from_rows({{0, 1, 2, 1}}, {1});
  Tensor frozen;
  {
    Tape tape;
    auto bound = bind(tape, model);
    auto outs = score_sequences(tape, bound, batch);
    frozen = entropy_surrogate(tape, outs, EntropyBonusConfig{0.05, true}).p1_weights;
  }
  // same parameters: frozen weights equal recomputed weights, same loss
  Tape tape;
  auto bound = bind(tape, model);
  auto outs = score_sequences(tape, bound, batch);
  auto a = entropy_surrogate(tape, outs, EntropyBonusConfig{0.05, true});
  auto b = entropy_surrogate(tape, outs, EntropyBonusConfig{0.05, true}, &frozen);
  EXPECT_DOUBLE_EQ(a.loss_term.value().item(), b.loss_term.value().item());
}
