// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
//
// mmpo-lab <sft|align|eval|verify|report> --config <file> [--set key=value ...]
//
// A desk-scale preference-optimization lab: supervised warm-up, MMPO/DPO/SimPO
// alignment on synthetic or JSONL preference data, evaluation against a
// planted reward, and a machine-checked verification suite for the
// objective's analytic properties.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "mmpo/cli.hpp"

namespace {

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const mmpo::io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return mmpo::kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return mmpo::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mmpo::kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmpo-lab: desk-scale preference-optimization laboratory"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file (defaults used when omitted)");
  app.add_option("--set", overrides, "flat dotted-key override, e.g. --set train.beta=0.05");

  auto* sft = app.add_subcommand("sft", "supervised warm-up producing the reference checkpoint");
  std::string sft_out;
  sft->add_option("--out", sft_out, "output directory (config out_dir)");

  auto* align = app.add_subcommand("align", "preference optimization from an SFT checkpoint");
  std::string method, sweep, ablate, align_out, sft_ckpt, resume;
  double beta = -1;
  std::int64_t seed = -1, epochs = -1;
  align->add_option("--method", method, "mmpo | dpo | simpo");
  align->add_option("--beta", beta, "KL-strength hyperparameter");
  align->add_option("--seed", seed, "training seed");
  align->add_option("--epochs", epochs, "training epochs");
  align->add_option("--sweep", sweep, "key=v1,v2,... one run directory per value (e.g. beta=0.01,0.05,0.5)");
  align->add_option("--ablate", ablate,
                    "comma list of no_aux_loss,no_in_batch_norm,length_normalize,entropy_max");
  align->add_option("--out", align_out, "output directory (config out_dir)");
  align->add_option("--sft-checkpoint", sft_ckpt, "path to the SFT checkpoint");
  align->add_option("--resume", resume, "resume from a trainer checkpoint");

  auto* eval = app.add_subcommand("eval", "reward accuracy and planted-reward win-rate proxy");
  std::string eval_ckpt, eval_sft, eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "tuned model checkpoint");
  eval->add_option("--sft-checkpoint", eval_sft, "SFT baseline checkpoint");
  eval->add_option("--out", eval_out, "output directory (config out_dir)");

  auto* verify = app.add_subcommand("verify", "run the analytic verification suite");
  std::string claims_csv, inject_bug, verify_out;
  std::int64_t verify_seed = -1;
  verify->add_option("--claims", claims_csv, "comma list of claim ids (default: all)");
  verify->add_option("--inject-bug", inject_bug,
                     "negative-control hook (theorem1-sign-flip) that must fail");
  verify->add_option("--seed", verify_seed, "oracle seed");
  verify->add_option("--out", verify_out, "directory for verify_report.json");

  auto* report = app.add_subcommand("report", "summarize run directories into CSV/JSON");
  std::vector<std::string> run_dirs;
  std::string csv_path, json_path;
  report->add_option("dirs", run_dirs, "run directories containing metrics.jsonl");
  report->add_option("--csv", csv_path, "CSV output path (stdout when omitted)");
  report->add_option("--json", json_path, "JSON output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? mmpo::kExitOk : mmpo::kExitUsage;
  }

  return guarded([&]() -> int {
    nlohmann::json cfg = mmpo::load_run_config(config_path, overrides);

    if (sft->parsed()) {
      if (!sft_out.empty()) cfg["out_dir"] = sft_out;
      return mmpo::cmd_sft(cfg);
    }
    if (align->parsed()) {
      if (!method.empty()) cfg["train"]["method"] = method;
      if (beta >= 0) cfg["train"]["beta"] = beta;
      if (seed >= 0) cfg["train"]["seed"] = seed;
      if (epochs >= 0) cfg["train"]["epochs"] = epochs;
      if (!align_out.empty()) cfg["out_dir"] = align_out;
      if (!sft_ckpt.empty()) cfg["sft_checkpoint"] = sft_ckpt;
      if (!resume.empty()) cfg["train"]["resume_checkpoint"] = resume;
      if (!ablate.empty()) {
        std::stringstream ss(ablate);
        std::string flag;
        while (std::getline(ss, flag, ',')) {
          if (flag.empty()) continue;
          mmpo::apply_override(cfg, "train." + flag + "=true");
        }
      }
      return mmpo::cmd_align(cfg, sweep);
    }
    if (eval->parsed()) {
      if (!eval_ckpt.empty()) cfg["checkpoint"] = eval_ckpt;
      if (!eval_sft.empty()) cfg["sft_checkpoint"] = eval_sft;
      if (!eval_out.empty()) cfg["out_dir"] = eval_out;
      return mmpo::cmd_eval(cfg);
    }
    if (verify->parsed()) {
      if (verify_seed >= 0) cfg["verify"]["seed"] = verify_seed;
      if (!verify_out.empty()) cfg["out_dir"] = verify_out;
      std::vector<std::string> claims;
      std::stringstream ss(claims_csv);
      std::string c;
      while (std::getline(ss, c, ',')) {
        if (!c.empty()) claims.push_back(c);
      }
      return mmpo::cmd_verify(cfg, claims, inject_bug);
    }
    if (report->parsed()) {
      return mmpo::cmd_report(run_dirs, csv_path, json_path);
    }
    return mmpo::kExitUsage;
  });
}
