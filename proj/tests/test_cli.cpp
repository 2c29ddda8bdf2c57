// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmpo/cli.hpp"

using namespace mmpo;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in) << path;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Desk-scale defaults shrunk to seconds for the test suite.
nlohmann::json micro_config(const std::string& out_dir) {
  nlohmann::json cfg = default_run_config();
  cfg["data"]["n_train"] = 48;
  cfg["data"]["n_val"] = 24;
  cfg["data"]["prompt_len_min"] = 3;
  cfg["data"]["prompt_len_max"] = 5;
  cfg["data"]["completion_len_min"] = 4;
  cfg["data"]["completion_len_max"] = 7;
  cfg["sft"]["synthetic_lines"] = 64;
  cfg["sft"]["epochs"] = 1;
  cfg["sft"]["batch"] = 16;
  cfg["model"]["d_model"] = 16;
  cfg["model"]["n_layers"] = 1;
  cfg["model"]["max_seq_len"] = 32;
  cfg["train"]["epochs"] = 1;
  cfg["train"]["per_step_batch"] = 4;
  cfg["train"]["grad_accum_steps"] = 2;
  cfg["train"]["max_prompt_len"] = 8;
  cfg["train"]["max_completion_len"] = 8;
  cfg["eval"]["n_prompts"] = 16;
  cfg["eval"]["max_new"] = 8;
  cfg["out_dir"] = out_dir;
  return cfg;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  nlohmann::json cfg = default_run_config();
  EXPECT_EQ(cfg["train"]["method"], "mmpo");
  EXPECT_DOUBLE_EQ(cfg["train"]["beta"].get<double>(), 0.05);
  EXPECT_DOUBLE_EQ(cfg["train"]["reward_epsilon"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(cfg["train"]["rejected_baseline"].get<double>(), 0.1);
  EXPECT_EQ(cfg["train"]["per_step_batch"].get<int>() * cfg["train"]["grad_accum_steps"].get<int>(),
            32);

  apply_override(cfg, "train.beta=0.5");
  EXPECT_DOUBLE_EQ(cfg["train"]["beta"].get<double>(), 0.5);
  apply_override(cfg, "train.method=dpo");
  EXPECT_EQ(cfg["train"]["method"], "dpo");
  apply_override(cfg, "train.no_aux_loss=true");
  EXPECT_TRUE(cfg["train"]["no_aux_loss"].get<bool>());
  apply_override(cfg, "out_dir=/tmp/x");
  EXPECT_EQ(cfg["out_dir"], "/tmp/x");

  EXPECT_THROW(apply_override(cfg, "train.unknown_key=1"), std::invalid_argument);
  EXPECT_THROW(apply_override(cfg, "nosuchsection.x=1"), std::invalid_argument);
  EXPECT_THROW(apply_override(cfg, "garbage"), std::invalid_argument);
}

TEST(Config, FileMergeKeepsDefaults) {
  const std::string dir = fresh_dir("mmpo_cli_cfg");
  const std::string path = dir + "/cfg.json";
  {
    std::ofstream out(path);
    out << R"({"train": {"beta": 0.01}})";
  }
  auto cfg = load_run_config(path, {"train.seed=99"});
  EXPECT_DOUBLE_EQ(cfg["train"]["beta"].get<double>(), 0.01);
  EXPECT_EQ(cfg["train"]["seed"].get<int>(), 99);
  EXPECT_EQ(cfg["train"]["method"], "mmpo");  // untouched default
  EXPECT_THROW(load_run_config(dir + "/missing.json", {}), io_error);
}

TEST(Cli, SftProducesCheckpointAndMetrics) {
  const std::string dir = fresh_dir("mmpo_cli_sft");
  auto cfg = micro_config(dir);
  EXPECT_EQ(cmd_sft(cfg), kExitOk);
  EXPECT_TRUE(fs::exists(dir + "/sft.bin"));
  EXPECT_TRUE(fs::exists(dir + "/config.json"));
  EXPECT_TRUE(fs::exists(dir + "/sft_metrics.jsonl"));

  // zero-epoch run: checkpoint equals initialization
  const std::string dir0 = fresh_dir("mmpo_cli_sft0");
  auto cfg0 = micro_config(dir0);
  cfg0["sft"]["epochs"] = 0;
  EXPECT_EQ(cmd_sft(cfg0), kExitOk);
  auto loaded = load_model_checkpoint(dir0 + "/sft.bin");
  auto fresh = PolicyModel::init(cli_detail::lm_config_of(cfg0),
                                 cfg0["sft"]["seed"].get<std::uint64_t>());
  for (const auto& [name, t] : fresh.params) {
    const auto& l = loaded.params.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t[i], l[i]);
  }

  // rerun with the same seed: identical checkpoint bytes
  const std::string dir1 = fresh_dir("mmpo_cli_sft1");
  auto cfg1 = micro_config(dir1);
  EXPECT_EQ(cmd_sft(cfg1), kExitOk);
  EXPECT_EQ(slurp(dir + "/sft.bin"), slurp(dir1 + "/sft.bin"));
}

TEST(Cli, AlignEvalReportPipeline) {
  const std::string sft_dir = fresh_dir("mmpo_cli_pipe_sft");
  auto cfg = micro_config(sft_dir);
  ASSERT_EQ(cmd_sft(cfg), kExitOk);

  const std::string run_dir = fresh_dir("mmpo_cli_pipe_run");
  auto acfg = micro_config(run_dir);
  acfg["sft_checkpoint"] = sft_dir + "/sft.bin";
  ASSERT_EQ(cmd_align(acfg), kExitOk);
  EXPECT_TRUE(fs::exists(run_dir + "/metrics.jsonl"));
  EXPECT_TRUE(fs::exists(run_dir + "/config.json"));
  EXPECT_TRUE(fs::exists(run_dir + "/ckpt_epoch_1.bin"));

  // metrics carry the reward_accuracy column on every line
  {
    std::ifstream metrics(run_dir + "/metrics.jsonl");
    std::string line;
    std::size_t rows = 0;
    bool saw_val = false;
    while (std::getline(metrics, line)) {
      auto j = nlohmann::json::parse(line);
      EXPECT_TRUE(j.contains("reward_accuracy")) << line;
      saw_val |= j["split"] == "val";
      ++rows;
    }
    EXPECT_GE(rows, 6u);
    EXPECT_TRUE(saw_val);
  }

  // determinism: rerunning the same alignment yields byte-identical outputs
  const std::string run_dir2 = fresh_dir("mmpo_cli_pipe_run2");
  auto acfg2 = micro_config(run_dir2);
  acfg2["sft_checkpoint"] = sft_dir + "/sft.bin";
  ASSERT_EQ(cmd_align(acfg2), kExitOk);
  EXPECT_EQ(slurp(run_dir + "/metrics.jsonl"), slurp(run_dir2 + "/metrics.jsonl"));
  EXPECT_EQ(slurp(run_dir + "/ckpt_epoch_1.bin"), slurp(run_dir2 + "/ckpt_epoch_1.bin"));

  // eval produces the report with both accuracies and the win-rate proxy
  auto ecfg = micro_config(run_dir);
  ecfg["checkpoint"] = run_dir + "/ckpt_epoch_1.bin";
  ecfg["sft_checkpoint"] = sft_dir + "/sft.bin";
  ASSERT_EQ(cmd_eval(ecfg), kExitOk);
  auto ev = nlohmann::json::parse(slurp(run_dir + "/eval.json"));
  EXPECT_TRUE(ev.contains("reward_accuracy"));
  EXPECT_TRUE(ev.contains("proxy_win_rate"));
  EXPECT_EQ(ev["proxy_prompts"].get<int>(), 16);

  // report: csv rows match an independent recount of the val records
  const std::string csv_path = run_dir + "/report.csv";
  const std::string json_path = run_dir + "/report.json";
  ASSERT_EQ(cmd_report({run_dir}, csv_path, json_path), kExitOk);
  const std::string csv = slurp(csv_path);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n' ? 1 : 0;
  std::size_t val_rows = 0;
  {
    std::ifstream metrics(run_dir + "/metrics.jsonl");
    std::string line;
    while (std::getline(metrics, line)) {
      if (nlohmann::json::parse(line)["split"] == "val") ++val_rows;
    }
  }
  EXPECT_EQ(lines, val_rows + 1);  // header + one row per validation record
  auto rows = nlohmann::json::parse(slurp(json_path));
  ASSERT_EQ(rows.size(), val_rows);
  EXPECT_EQ(rows[0]["method"], "mmpo");
  EXPECT_FALSE(rows[rows.size() - 1]["proxy_win_rate"].is_null());
}

TEST(Cli, SweepCreatesPerValueRunDirs) {
  const std::string sft_dir = fresh_dir("mmpo_cli_sweep_sft");
  auto cfg = micro_config(sft_dir);
  cfg["data"]["n_train"] = 24;
  cfg["data"]["n_val"] = 12;
  ASSERT_EQ(cmd_sft(cfg), kExitOk);

  const std::string out = fresh_dir("mmpo_cli_sweep");
  auto acfg = micro_config(out);
  acfg["data"]["n_train"] = 24;
  acfg["data"]["n_val"] = 12;
  acfg["sft_checkpoint"] = sft_dir + "/sft.bin";
  ASSERT_EQ(cmd_align(acfg, "beta=0.01,0.05,0.5"), kExitOk);
  for (const std::string b : {"0.01", "0.05", "0.5"}) {
    EXPECT_TRUE(fs::exists(out + "/beta_" + b + "/metrics.jsonl")) << b;
    auto echoed = nlohmann::json::parse(slurp(out + "/beta_" + b + "/config.json"));
    EXPECT_DOUBLE_EQ(echoed["train"]["beta"].get<double>(), std::stod(b));
  }
}

TEST(Cli, EvalOfSftAgainstItselfIsNearHalf) {
  const std::string dir = fresh_dir("mmpo_cli_self");
  auto cfg = micro_config(dir);
  cfg["eval"]["n_prompts"] = 24;
  ASSERT_EQ(cmd_sft(cfg), kExitOk);
  auto ecfg = cfg;
  ecfg["checkpoint"] = dir + "/sft.bin";
  ecfg["sft_checkpoint"] = dir + "/sft.bin";
  ASSERT_EQ(cmd_eval(ecfg), kExitOk);
  auto ev = nlohmann::json::parse(slurp(dir + "/eval.json"));
  // identical models with independent sampling streams: symmetric outcomes
  EXPECT_NEAR(ev["proxy_win_rate"].get<double>(), 0.5, 0.25);
}

TEST(Cli, VerifyCoverageAndFiltering) {
  const std::string dir = fresh_dir("mmpo_cli_verify");
  auto cfg = micro_config(dir);
  std::ostringstream out;
  EXPECT_EQ(cmd_verify(cfg, {"lemma1", "normalization"}, "", out), kExitOk);
  EXPECT_NE(out.str().find("[PASS] lemma1"), std::string::npos);
  EXPECT_EQ(out.str().find("coverage:"), std::string::npos);  // filtered run

  std::ostringstream bug;
  EXPECT_EQ(cmd_verify(cfg, {"theorem1"}, "theorem1-sign-flip", bug), kExitFailure);
  EXPECT_NE(bug.str().find("[FAIL] theorem1"), std::string::npos);

  EXPECT_THROW(cmd_verify(cfg, {"theorem1"}, "unknown-bug", bug), std::invalid_argument);
  EXPECT_THROW(cmd_verify(cfg, {"not_a_claim"}, "", bug), std::invalid_argument);
}

TEST(Cli, ReportToleratesMalformedRuns) {
  const std::string good = fresh_dir("mmpo_report_good");
  const std::string bad = fresh_dir("mmpo_report_bad");
  {
    std::ofstream cfg(good + "/config.json");
    cfg << default_run_config().dump();
    std::ofstream metrics(good + "/metrics.jsonl");
    MetricRecord rec;
    rec.step = 6;
    rec.epoch = 1;
    rec.reward_accuracy = 0.75;
    rec.split = "val";
    metrics << rec.to_json().dump() << "\n";
  }
  {
    std::ofstream metrics(bad + "/metrics.jsonl");
    metrics << "{this is not json\n";
  }
  const std::string csv_path = good + "/out.csv";
  std::ostringstream warnings;
  EXPECT_EQ(cmd_report({good, bad, good + "/missing"}, csv_path, "", warnings), kExitOk);
  const std::string csv = slurp(csv_path);
  EXPECT_NE(csv.find("mmpo,0.05,1,0.75"), std::string::npos) << csv;
  EXPECT_NE(warnings.str().find("warning"), std::string::npos);
}

TEST(Cli, MissingInputsMapToIoErrors) {
  const std::string dir = fresh_dir("mmpo_cli_missing");
  auto cfg = micro_config(dir);
  cfg["sft_checkpoint"] = dir + "/does_not_exist.bin";
  EXPECT_THROW(run_single_alignment(cfg, dir), io_error);
  auto ecfg = micro_config(dir);
  ecfg["checkpoint"] = dir + "/nope.bin";
  ecfg["sft_checkpoint"] = dir + "/nope2.bin";
  EXPECT_THROW(cmd_eval(ecfg), io_error);
}
