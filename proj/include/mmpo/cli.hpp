// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "mmpo/checkpoint.hpp"
#include "mmpo/data.hpp"
#include "mmpo/model.hpp"
#include "mmpo/objectives.hpp"
#include "mmpo/oracles.hpp"
#include "mmpo/tokenizer.hpp"
#include "mmpo/trainer.hpp"

namespace mmpo {

// Exit codes: 0 success, 1 verification/eval failure, 2 usage error, 3 I/O.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

// ---- configuration ----

inline nlohmann::json default_run_config() {
  return nlohmann::json{
      {"model",
       {{"d_model", 64}, {"max_seq_len", 128}, {"n_heads", 2}, {"n_layers", 2}, {"vocab_size", 64}}},
      {"data",
       {{"path", ""},
        {"synthetic", true},
        {"seed", 13},
        {"n_train", 2000},
        {"n_val", 500},
        {"val_fraction", 0.2},
        {"prompt_len_min", 4},
        {"prompt_len_max", 8},
        {"completion_len_min", 8},
        {"completion_len_max", 12},
        {"good_prob", 0.25},
        {"bad_prob", 0.25},
        {"filler_chars", "xz"},
        {"min_gap", 2.0},
        {"good_char", "g"},
        {"bad_char", "b"},
        {"good_weight", 1.0},
        {"bad_weight", 1.0},
        {"target_len", 12},
        {"length_penalty", 0.25}}},
      {"sft",
       {{"corpus", ""},
        {"synthetic_lines", 2000},
        {"seed", 7},
        {"lr", 1e-3},
        {"epochs", 1},
        {"batch", 16},
        {"warmup_fraction", 0.1},
        {"weight_decay", 0.0},
        {"clip_norm", 1.0},
        {"max_len", 64}}},
      {"train",
       {{"method", "mmpo"},
        {"beta", 0.05},
        {"reward_epsilon", 0.9},
        {"rejected_baseline", 0.1},
        {"norm_epsilon", 1e-6},
        {"gamma_over_beta", 1.6},
        {"no_aux_loss", false},
        {"no_in_batch_norm", false},
        {"length_normalize", false},
        {"entropy_max", false},
        {"base_lr", 5e-4},
        {"weight_decay", 0.0},
        {"adam_beta1", 0.9},
        {"adam_beta2", 0.999},
        {"adam_eps", 1e-8},
        {"epochs", 3},
        {"stop_epoch", 0},
        {"per_step_batch", 8},
        {"grad_accum_steps", 4},
        {"warmup_fraction", 0.1},
        {"clip_norm", 1.0},
        {"seed", 11},
        {"max_prompt_len", 32},
        {"max_completion_len", 32},
        {"eval_batch", 64},
        {"resume_checkpoint", ""}}},
      {"eval", {{"n_prompts", 500}, {"max_new", 16}, {"temperature", 1.0}, {"seed", 17}}},
      {"verify", {{"seed", 12345}}},
      {"out_dir", "runs/exp"},
      {"sft_checkpoint", ""},
      {"checkpoint", ""}};
}

// Flat dotted-key override; the key must already exist so typos fail loudly.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like section.key=value: " + assignment);
  }
  const std::string dotted = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json* node = &cfg;
  std::stringstream path(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) {
      throw std::invalid_argument("unknown config key '" + dotted + "'");
    }
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->contains(leaf)) {
    throw std::invalid_argument("unknown config key '" + dotted + "'");
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // bare strings need no quotes on the command line
  }
  if ((*node)[leaf].is_string() && !value.is_string()) value = raw;
  (*node)[leaf] = value;
}

inline nlohmann::json load_run_config(const std::string& config_path,
                                      const std::vector<std::string>& overrides) {
  nlohmann::json cfg = default_run_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw io_error("cannot open config file: " + config_path);
    nlohmann::json user;
    try {
      in >> user;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config file is not valid JSON: " + std::string(e.what()));
    }
    cfg.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

namespace cli_detail {

inline LmConfig lm_config_of(const nlohmann::json& cfg) {
  LmConfig c = lm_config_from_json(cfg.at("model"));
  return c;
}

inline SynthConfig synth_config_of(const nlohmann::json& cfg) {
  const auto& d = cfg.at("data");
  SynthConfig s;
  s.reward.good_char = d.at("good_char").get<std::string>().at(0);
  s.reward.bad_char = d.at("bad_char").get<std::string>().at(0);
  s.reward.good_weight = d.at("good_weight").get<double>();
  s.reward.bad_weight = d.at("bad_weight").get<double>();
  s.reward.target_len = d.at("target_len").get<std::int64_t>();
  s.reward.length_penalty = d.at("length_penalty").get<double>();
  s.prompt_len_min = d.at("prompt_len_min").get<std::int64_t>();
  s.prompt_len_max = d.at("prompt_len_max").get<std::int64_t>();
  s.completion_len_min = d.at("completion_len_min").get<std::int64_t>();
  s.completion_len_max = d.at("completion_len_max").get<std::int64_t>();
  s.good_prob = d.at("good_prob").get<double>();
  s.bad_prob = d.at("bad_prob").get<double>();
  s.filler_chars = d.at("filler_chars").get<std::string>();
  s.min_gap = d.at("min_gap").get<double>();
  s.validate();
  return s;
}

inline ObjectiveConfig objective_config_of(const nlohmann::json& t) {
  ObjectiveConfig o;
  o.method = method_from_name(t.at("method").get<std::string>());
  o.beta = t.at("beta").get<double>();
  o.reward_epsilon = t.at("reward_epsilon").get<double>();
  o.rejected_baseline = t.at("rejected_baseline").get<double>();
  o.norm_epsilon = t.at("norm_epsilon").get<double>();
  o.gamma_over_beta = t.at("gamma_over_beta").get<double>();
  o.no_aux_loss = t.at("no_aux_loss").get<bool>();
  o.no_in_batch_norm = t.at("no_in_batch_norm").get<bool>();
  o.length_normalize = t.at("length_normalize").get<bool>();
  o.entropy_max = t.at("entropy_max").get<bool>();
  o.validate();
  return o;
}

inline TrainConfig train_config_of(const nlohmann::json& cfg, const std::string& run_dir) {
  const auto& t = cfg.at("train");
  TrainConfig c;
  c.objective = objective_config_of(t);
  c.base_lr = t.at("base_lr").get<double>();
  c.adam.weight_decay = t.at("weight_decay").get<double>();
  c.adam.beta1 = t.at("adam_beta1").get<double>();
  c.adam.beta2 = t.at("adam_beta2").get<double>();
  c.adam.eps = t.at("adam_eps").get<double>();
  c.epochs = t.at("epochs").get<std::int64_t>();
  c.stop_epoch = t.at("stop_epoch").get<std::int64_t>();
  c.per_step_batch = t.at("per_step_batch").get<std::int64_t>();
  c.grad_accum_steps = t.at("grad_accum_steps").get<std::int64_t>();
  c.warmup_fraction = t.at("warmup_fraction").get<double>();
  c.clip_norm = t.at("clip_norm").get<double>();
  c.seed = t.at("seed").get<std::uint64_t>();
  c.checkpoint_dir = run_dir;
  c.max_prompt_len = t.at("max_prompt_len").get<std::int64_t>();
  c.max_completion_len = t.at("max_completion_len").get<std::int64_t>();
  c.eval_batch = t.at("eval_batch").get<std::int64_t>();
  c.validate();
  return c;
}

// Train and validation triples, synthetic or from a JSONL file.
inline std::pair<std::vector<PreferenceTriple>, std::vector<PreferenceTriple>> datasets_of(
    const nlohmann::json& cfg) {
  const auto& d = cfg.at("data");
  if (!d.at("path").get<std::string>().empty()) {
    auto all = load_preference_dataset(d.at("path").get<std::string>());
    return split_dataset(all, d.at("val_fraction").get<double>(), d.at("seed").get<std::uint64_t>());
  }
  const SynthConfig synth = synth_config_of(cfg);
  const auto seed = d.at("seed").get<std::uint64_t>();
  auto train = synthesize_preference_dataset(seed, synth, d.at("n_train").get<std::int64_t>());
  auto val = synthesize_preference_dataset(seed + 1, synth, d.at("n_val").get<std::int64_t>());
  return {std::move(train), std::move(val)};
}

inline void echo_config(const nlohmann::json& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/config.json");
  if (!out) throw io_error("cannot write config echo: " + dir + "/config.json");
  out << cfg.dump(2) << "\n";
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open corpus file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

inline void require_tokenizer_vocab(const LmConfig& lm, const Tokenizer& tok) {
  if (lm.vocab_size != tok.vocab_size()) {
    throw std::invalid_argument("model.vocab_size must equal the tokenizer vocabulary (" +
                                std::to_string(tok.vocab_size()) + "), got " +
                                std::to_string(lm.vocab_size));
  }
}

struct WinRate {
  double rate = 0;
  double ci_low = 0;
  double ci_high = 0;
  std::int64_t prompts = 0;
};

// Planted-reward win rate of `candidate` against `baseline` on held-out
// prompts: sample one completion from each, score both, ties count 1/2.
// A stand-in metric, not an external judge.
inline WinRate planted_win_rate(const PolicyModel& candidate, const PolicyModel& baseline,
                                const std::vector<std::string>& prompts, const Tokenizer& tok,
                                const PlantedReward& reward, std::int64_t max_new,
                                double temperature, std::uint64_t seed,
                                std::int64_t max_prompt_len) {
  if (prompts.empty()) throw std::invalid_argument("planted_win_rate: no prompts");
  Rng rng_c(seed * 2 + 1);
  Rng rng_b(seed * 2 + 2);
  double total = 0, sq = 0;
  for (const auto& prompt : prompts) {
    std::vector<std::int32_t> ids{Tokenizer::begin_id};
    auto p = tok.tokenize(prompt);
    if (static_cast<std::int64_t>(p.size()) > max_prompt_len) {
      p.erase(p.begin(), p.end() - max_prompt_len);
    }
    ids.insert(ids.end(), p.begin(), p.end());
    const auto gen_c =
        sample_completion(candidate, ids, max_new, temperature, rng_c, Tokenizer::end_id);
    const auto gen_b =
        sample_completion(baseline, ids, max_new, temperature, rng_b, Tokenizer::end_id);
    const double rc = reward.score(prompt, tok.detokenize(gen_c));
    const double rb = reward.score(prompt, tok.detokenize(gen_b));
    const double outcome = rc > rb ? 1.0 : (rc < rb ? 0.0 : 0.5);
    total += outcome;
    sq += outcome * outcome;
  }
  WinRate w;
  w.prompts = static_cast<std::int64_t>(prompts.size());
  const double n = static_cast<double>(w.prompts);
  w.rate = total / n;
  const double var = std::max(0.0, (sq - n * w.rate * w.rate) / std::max(1.0, n - 1.0));
  const double se = std::sqrt(var / n);
  w.ci_low = w.rate - 1.96 * se;
  w.ci_high = w.rate + 1.96 * se;
  return w;
}

}  // namespace cli_detail

// ---- commands ----

inline int cmd_sft(const nlohmann::json& cfg) {
  const Tokenizer tok;
  const LmConfig lm = cli_detail::lm_config_of(cfg);
  cli_detail::require_tokenizer_vocab(lm, tok);
  const auto& s = cfg.at("sft");

  std::vector<std::string> lines;
  if (!s.at("corpus").get<std::string>().empty()) {
    lines = cli_detail::read_lines(s.at("corpus").get<std::string>());
  } else {
    lines = synthesize_sft_corpus(s.at("seed").get<std::uint64_t>(),
                                  cli_detail::synth_config_of(cfg),
                                  s.at("synthetic_lines").get<std::int64_t>());
  }

  SftConfig sft;
  sft.lr = s.at("lr").get<double>();
  sft.adam.weight_decay = s.at("weight_decay").get<double>();
  sft.epochs = s.at("epochs").get<std::int64_t>();
  sft.batch = s.at("batch").get<std::int64_t>();
  sft.warmup_fraction = s.at("warmup_fraction").get<double>();
  sft.clip_norm = s.at("clip_norm").get<double>();
  sft.seed = s.at("seed").get<std::uint64_t>();
  sft.max_len = s.at("max_len").get<std::int64_t>();

  PolicyModel model = PolicyModel::init(lm, sft.seed);
  auto history = train_sft(sft, lines, tok, model);

  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  cli_detail::echo_config(cfg, out_dir);
  {
    std::ofstream metrics(out_dir + "/sft_metrics.jsonl");
    if (!metrics) throw io_error("cannot write " + out_dir + "/sft_metrics.jsonl");
    for (const auto& rec : history) metrics << rec.to_json().dump() << "\n";
  }
  save_model_checkpoint(out_dir + "/sft.bin", model);
  std::cout << "sft: " << lines.size() << " lines, " << history.size() << " steps";
  if (!history.empty()) {
    std::cout << ", loss " << history.front().loss << " -> " << history.back().loss;
  }
  std::cout << "\ncheckpoint: " << out_dir + "/sft.bin" << "\n";
  return kExitOk;
}

inline int run_single_alignment(nlohmann::json cfg, const std::string& run_dir) {
  const Tokenizer tok;
  const LmConfig lm = cli_detail::lm_config_of(cfg);
  cli_detail::require_tokenizer_vocab(lm, tok);

  const std::string sft_path = cfg.at("sft_checkpoint").get<std::string>();
  if (sft_path.empty()) throw std::invalid_argument("align requires sft_checkpoint in the config");
  PolicyModel model = load_model_checkpoint(sft_path, &lm);
  const PolicyModel reference = model.frozen_clone();  // pi_sft anchors every run

  auto [train_set, val_set] = cli_detail::datasets_of(cfg);
  TrainConfig tc = cli_detail::train_config_of(cfg, run_dir);

  cli_detail::echo_config(cfg, run_dir);
  std::ofstream metrics(run_dir + "/metrics.jsonl");
  if (!metrics) throw io_error("cannot write " + run_dir + "/metrics.jsonl");

  TrainState state;
  const std::string resume = cfg.at("train").at("resume_checkpoint").get<std::string>();
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    if (!(ckpt.config == lm)) throw io_error("resume checkpoint config mismatch: " + resume);
    model = model_from_checkpoint(ckpt);
    state = train_state_from_checkpoint(ckpt);
  }

  auto result = train(tc, train_set, val_set, tok, model, &reference, &state,
                      [&](const MetricRecord& rec) { metrics << rec.to_json().dump() << "\n"; });

  std::cout << "align[" << method_name(tc.objective.method) << ", beta=" << tc.objective.beta
            << "]: " << result.history.size() << " records";
  if (!std::isnan(result.final_val_accuracy)) {
    std::cout << ", final val reward accuracy " << result.final_val_accuracy;
  }
  std::cout << "\nrun dir: " << run_dir << "\n";
  return kExitOk;
}

inline int cmd_align(nlohmann::json cfg, const std::string& sweep = "") {
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  if (sweep.empty()) {
    return run_single_alignment(std::move(cfg), out_dir);
  }
  const auto eq = sweep.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("--sweep must look like key=v1,v2,... : " + sweep);
  }
  const std::string key = sweep.substr(0, eq);
  std::stringstream values(sweep.substr(eq + 1));
  std::string v;
  int rc = kExitOk;
  bool any = false;
  while (std::getline(values, v, ',')) {
    if (v.empty()) continue;
    any = true;
    nlohmann::json run_cfg = cfg;
    apply_override(run_cfg, "train." + key + "=" + v);
    const std::string run_dir = out_dir + "/" + key + "_" + v;
    rc = std::max(rc, run_single_alignment(std::move(run_cfg), run_dir));
  }
  if (!any) throw std::invalid_argument("--sweep has no values: " + sweep);
  return rc;
}

inline int cmd_eval(const nlohmann::json& cfg) {
  const Tokenizer tok;
  const LmConfig lm = cli_detail::lm_config_of(cfg);
  cli_detail::require_tokenizer_vocab(lm, tok);

  const std::string ckpt_path = cfg.at("checkpoint").get<std::string>();
  const std::string sft_path = cfg.at("sft_checkpoint").get<std::string>();
  if (ckpt_path.empty() || sft_path.empty()) {
    throw std::invalid_argument("eval requires checkpoint and sft_checkpoint in the config");
  }
  PolicyModel tuned = load_model_checkpoint(ckpt_path, &lm);
  PolicyModel sft = load_model_checkpoint(sft_path, &lm);
  PolicyModel ref = sft.frozen_clone();

  auto [train_set, val_set] = cli_detail::datasets_of(cfg);
  (void)train_set;
  if (val_set.empty()) throw std::invalid_argument("eval: empty validation split");

  TrainConfig tc = cli_detail::train_config_of(cfg, "");
  EvalMetrics tuned_metrics = evaluate_preference(tuned, ref, val_set, tok, tc);
  EvalMetrics sft_metrics = evaluate_preference(sft, ref, val_set, tok, tc);

  const auto& e = cfg.at("eval");
  const auto n_prompts =
      std::min<std::int64_t>(e.at("n_prompts").get<std::int64_t>(),
                             static_cast<std::int64_t>(val_set.size()));
  std::vector<std::string> prompts;
  for (std::int64_t i = 0; i < n_prompts; ++i) prompts.push_back(val_set[static_cast<std::size_t>(i)].prompt);
  const SynthConfig synth = cli_detail::synth_config_of(cfg);
  auto win = cli_detail::planted_win_rate(tuned, sft, prompts, tok, synth.reward,
                                          e.at("max_new").get<std::int64_t>(),
                                          e.at("temperature").get<double>(),
                                          e.at("seed").get<std::uint64_t>(), tc.max_prompt_len);

  nlohmann::json report{{"reward_accuracy", tuned_metrics.reward_accuracy},
                        {"reward_accuracy_sft", sft_metrics.reward_accuracy},
                        {"val_examples", tuned_metrics.examples},
                        {"proxy_win_rate", win.rate},
                        {"proxy_win_rate_ci_low", win.ci_low},
                        {"proxy_win_rate_ci_high", win.ci_high},
                        {"proxy_prompts", win.prompts},
                        {"loss", tuned_metrics.loss}};
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/eval.json");
    if (!out) throw io_error("cannot write " + out_dir + "/eval.json");
    out << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

inline int cmd_verify(const nlohmann::json& cfg, const std::vector<std::string>& claims,
                      const std::string& inject_bug, std::ostream& out = std::cout) {
  OracleOptions opts;
  opts.seed = cfg.at("verify").at("seed").get<std::uint64_t>();
  if (!inject_bug.empty()) {
    if (inject_bug == "theorem1-sign-flip") {
      opts.inject_theorem1_sign_flip = true;
    } else {
      throw std::invalid_argument("unknown --inject-bug mode: " + inject_bug);
    }
  }
  auto reports = run_oracles(opts, claims);

  if (claims.empty()) {
    // Coverage self-check: every registered claim must have produced a report.
    for (const auto& info : claim_registry()) {
      const bool found = std::any_of(reports.begin(), reports.end(),
                                     [&](const OracleReport& r) { return r.claim == info.id; });
      if (!found) {
        out << "coverage self-check FAILED: claim '" << info.id << "' has no oracle\n";
        return kExitFailure;
      }
    }
    out << "coverage: " << reports.size() << "/" << claim_registry().size()
        << " registered claims exercised\n";
  }

  std::vector<std::string> failing;
  nlohmann::json json_reports = nlohmann::json::array();
  for (const auto& r : reports) {
    json_reports.push_back(r.to_json());
    std::ostringstream line;
    line << (r.pass ? "[PASS] " : "[FAIL] ") << r.claim << " (" << r.cases
         << " cases): max deviation " << r.deviation << " vs tolerance " << r.tolerance;
    out << line.str() << "\n";
    for (const auto& d : r.details) out << "       " << d << "\n";
    if (!r.pass) failing.push_back(r.claim);
  }
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(out_dir + "/verify_report.json");
    if (f) f << json_reports.dump(2) << "\n";
  }
  if (!failing.empty()) {
    out << "FAILED claims:";
    for (const auto& c : failing) out << " " << c;
    out << "\n";
    return kExitFailure;
  }
  out << "all claims verified\n";
  return kExitOk;
}

inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& csv_path,
                      const std::string& json_path, std::ostream& err = std::cerr) {
  if (run_dirs.empty()) throw std::invalid_argument("report: no run directories given");
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& dir : run_dirs) {
    std::string method = "?";
    double beta = std::numeric_limits<double>::quiet_NaN();
    try {
      std::ifstream cfg_in(dir + "/config.json");
      if (cfg_in) {
        nlohmann::json cfg;
        cfg_in >> cfg;
        method = cfg.at("train").at("method").get<std::string>();
        beta = cfg.at("train").at("beta").get<double>();
      }
    } catch (const std::exception& e) {
      err << "warning: " << dir << "/config.json unreadable: " << e.what() << "\n";
    }

    double win_rate = std::numeric_limits<double>::quiet_NaN();
    {
      std::ifstream eval_in(dir + "/eval.json");
      if (eval_in) {
        try {
          nlohmann::json ev;
          eval_in >> ev;
          win_rate = ev.value("proxy_win_rate", win_rate);
        } catch (const std::exception& e) {
          err << "warning: " << dir << "/eval.json unreadable: " << e.what() << "\n";
        }
      }
    }

    std::ifstream metrics(dir + "/metrics.jsonl");
    if (!metrics) {
      err << "warning: missing metrics file in " << dir << "\n";
      continue;
    }
    std::string line;
    std::size_t line_no = 0;
    std::vector<MetricRecord> val_records;
    bool malformed = false;
    while (std::getline(metrics, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        auto rec = MetricRecord::from_json(nlohmann::json::parse(line));
        if (rec.split == "val") val_records.push_back(rec);
      } catch (const std::exception& e) {
        err << "warning: " << dir << "/metrics.jsonl:" << line_no << ": " << e.what() << "\n";
        malformed = true;
        break;
      }
    }
    if (malformed) continue;
    for (std::size_t i = 0; i < val_records.size(); ++i) {
      const auto& rec = val_records[i];
      nlohmann::json row{{"method", method},
                         {"beta", beta},
                         {"epoch", rec.epoch},
                         {"reward_accuracy", rec.reward_accuracy}};
      if (i + 1 == val_records.size() && !std::isnan(win_rate)) {
        row["proxy_win_rate"] = win_rate;
      } else {
        row["proxy_win_rate"] = nullptr;
      }
      rows.push_back(row);
    }
  }

  std::ostringstream csv;
  csv << "method,beta,epoch,reward_accuracy,proxy_win_rate\n";
  for (const auto& row : rows) {
    csv << row.at("method").get<std::string>() << "," << row.at("beta").get<double>() << ","
        << row.at("epoch").get<std::int64_t>() << "," << row.at("reward_accuracy").get<double>()
        << ",";
    if (!row.at("proxy_win_rate").is_null()) csv << row.at("proxy_win_rate").get<double>();
    csv << "\n";
  }
  if (csv_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(csv_path);
    if (!out) throw io_error("cannot write report CSV: " + csv_path);
    out << csv.str();
  }
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw io_error("cannot write report JSON: " + json_path);
    out << rows.dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace mmpo
