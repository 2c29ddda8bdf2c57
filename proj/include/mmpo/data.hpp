// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mmpo/common.hpp"
#include "mmpo/model.hpp"
#include "mmpo/rng.hpp"
#include "mmpo/tokenizer.hpp"

namespace mmpo {

struct PreferenceTriple {
  std::string prompt;
  std::string chosen;
  std::string rejected;

  void validate() const {
    if (prompt.empty() || chosen.empty() || rejected.empty()) {
      throw std::invalid_argument("PreferenceTriple: all fields must be nonempty");
    }
    if (chosen == rejected) {
      throw std::invalid_argument("PreferenceTriple: chosen and rejected are identical");
    }
  }
};

// Deterministic ground-truth scorer: rewards a designated good character,
// penalizes a bad one, and taxes length beyond a target. Admits exact
// evaluation, so it can both label synthetic pairs and score sampled text.
struct PlantedReward {
  char good_char = 'g';
  char bad_char = 'b';
  double good_weight = 1.0;
  double bad_weight = 1.0;
  std::int64_t target_len = 12;
  double length_penalty = 0.25;

  double score(const std::string& /*prompt*/, const std::string& completion) const {
    std::int64_t good = 0, bad = 0;
    for (char c : completion) {
      if (c == good_char) ++good;
      if (c == bad_char) ++bad;
    }
    const auto over = std::max<std::int64_t>(
        0, static_cast<std::int64_t>(completion.size()) - target_len);
    return good_weight * static_cast<double>(good) - bad_weight * static_cast<double>(bad) -
           length_penalty * static_cast<double>(over);
  }

  // Strict total order for a fixed prompt: score first, lexicographic
  // tie-break so equal-reward pairs are still ordered deterministically.
  bool prefers(const std::string& prompt, const std::string& a, const std::string& b) const {
    const double sa = score(prompt, a), sb = score(prompt, b);
    if (sa != sb) return sa > sb;
    return a > b;
  }
};

// ---- JSONL dataset io ----
// One UTF-8 JSON object per line with keys prompt/chosen/rejected; an
// optional "meta" object is ignored.

inline std::vector<PreferenceTriple> parse_preference_jsonl(std::istream& in,
                                                            const std::string& origin) {
  std::vector<PreferenceTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw io_error(origin + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    for (const char* key : {"prompt", "chosen", "rejected"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw io_error(origin + ":" + std::to_string(line_no) + ": missing string key '" + key +
                       "'");
      }
    }
    PreferenceTriple t{j["prompt"].get<std::string>(), j["chosen"].get<std::string>(),
                       j["rejected"].get<std::string>()};
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw io_error(origin + ":" + std::to_string(line_no) + ": rejected record: " + e.what());
    }
    out.push_back(std::move(t));
  }
  if (out.empty()) {
    throw std::invalid_argument(origin + ": empty preference dataset");
  }
  return out;
}

inline std::vector<PreferenceTriple> load_preference_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open dataset file: " + path);
  return parse_preference_jsonl(in, path);
}

inline void save_preference_dataset(const std::string& path,
                                    const std::vector<PreferenceTriple>& triples) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write dataset file: " + path);
  for (const auto& t : triples) {
    nlohmann::json j{{"prompt", t.prompt}, {"chosen", t.chosen}, {"rejected", t.rejected}};
    out << j.dump() << "\n";
  }
  if (!out) throw io_error("write failed: " + path);
}

// ---- synthetic dataset generation ----

struct SynthConfig {
  PlantedReward reward;
  std::int64_t prompt_len_min = 4;
  std::int64_t prompt_len_max = 8;
  std::int64_t completion_len_min = 8;
  std::int64_t completion_len_max = 12;
  double good_prob = 0.25;
  double bad_prob = 0.25;
  // Unscored characters. Kept to two symbols at the default probabilities so
  // every completion character is equally likely under generation; then
  // sequence log-probability comparisons track the planted reward gap
  // instead of raw scored-character counts.
  std::string filler_chars = "xz";
  // Pairs are resampled until the planted reward gap reaches min_gap, which
  // keeps the dataset strictly separable for an oracle scorer.
  double min_gap = 2.0;

  void validate() const {
    if (prompt_len_min < 1 || prompt_len_max < prompt_len_min || completion_len_min < 1 ||
        completion_len_max < completion_len_min) {
      throw std::invalid_argument("SynthConfig: invalid length ranges");
    }
    if (good_prob < 0 || bad_prob < 0 || good_prob + bad_prob > 1.0) {
      throw std::invalid_argument("SynthConfig: character probabilities out of range");
    }
    if (filler_chars.empty()) throw std::invalid_argument("SynthConfig: no filler characters");
    if (filler_chars.find(reward.good_char) != std::string::npos ||
        filler_chars.find(reward.bad_char) != std::string::npos) {
      throw std::invalid_argument("SynthConfig: filler pool overlaps the scored characters");
    }
    if (min_gap < 0) throw std::invalid_argument("SynthConfig: min_gap must be >= 0");
  }
};

namespace detail {

inline std::string random_filler_string(Rng& rng, const SynthConfig& cfg, std::int64_t len) {
  std::string s;
  s.reserve(static_cast<std::size_t>(len));
  for (std::int64_t i = 0; i < len; ++i) {
    s.push_back(cfg.filler_chars[static_cast<std::size_t>(rng.uniform_int(cfg.filler_chars.size()))]);
  }
  return s;
}

inline std::string random_completion(Rng& rng, const SynthConfig& cfg, std::int64_t len) {
  std::string s;
  s.reserve(static_cast<std::size_t>(len));
  for (std::int64_t i = 0; i < len; ++i) {
    const double u = rng.uniform();
    if (u < cfg.good_prob) {
      s.push_back(cfg.reward.good_char);
    } else if (u < cfg.good_prob + cfg.bad_prob) {
      s.push_back(cfg.reward.bad_char);
    } else {
      s.push_back(
          cfg.filler_chars[static_cast<std::size_t>(rng.uniform_int(cfg.filler_chars.size()))]);
    }
  }
  return s;
}

}  // namespace detail

// Samples preference triples labeled by the planted reward. Both completions
// in a pair share a length, so log-probability comparisons are driven by
// content rather than sequence length. Reproducible per seed.
inline std::vector<PreferenceTriple> synthesize_preference_dataset(std::uint64_t seed,
                                                                   const SynthConfig& cfg,
                                                                   std::int64_t n) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("synthesize_preference_dataset: n must be >= 1");
  Rng rng(seed);
  std::vector<PreferenceTriple> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t plen =
        cfg.prompt_len_min + static_cast<std::int64_t>(rng.uniform_int(
                                 static_cast<std::uint64_t>(cfg.prompt_len_max - cfg.prompt_len_min + 1)));
    const std::string prompt = detail::random_filler_string(rng, cfg, plen);
    const std::int64_t clen =
        cfg.completion_len_min +
        static_cast<std::int64_t>(rng.uniform_int(
            static_cast<std::uint64_t>(cfg.completion_len_max - cfg.completion_len_min + 1)));
    std::string a, b;
    for (int attempt = 0;; ++attempt) {
      a = detail::random_completion(rng, cfg, clen);
      b = detail::random_completion(rng, cfg, clen);
      if (a == b) continue;
      const double gap = std::abs(cfg.reward.score(prompt, a) - cfg.reward.score(prompt, b));
      if (gap >= cfg.min_gap || (cfg.min_gap == 0.0 && attempt >= 64)) break;
      if (attempt > 10000) {
        throw std::runtime_error("synthesize_preference_dataset: cannot reach min_gap " +
                                 std::to_string(cfg.min_gap));
      }
    }
    PreferenceTriple t;
    t.prompt = prompt;
    if (cfg.reward.prefers(prompt, a, b)) {
      t.chosen = a;
      t.rejected = b;
    } else {
      t.chosen = b;
      t.rejected = a;
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Plain text lines (prompt immediately followed by a completion) for the
// supervised warm-up stage, drawn from the same distribution as the
// preference data.
inline std::vector<std::string> synthesize_sft_corpus(std::uint64_t seed, const SynthConfig& cfg,
                                                      std::int64_t n) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("synthesize_sft_corpus: n must be >= 1");
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t plen =
        cfg.prompt_len_min + static_cast<std::int64_t>(rng.uniform_int(
                                 static_cast<std::uint64_t>(cfg.prompt_len_max - cfg.prompt_len_min + 1)));
    const std::int64_t clen =
        cfg.completion_len_min +
        static_cast<std::int64_t>(rng.uniform_int(
            static_cast<std::uint64_t>(cfg.completion_len_max - cfg.completion_len_min + 1)));
    out.push_back(detail::random_filler_string(rng, cfg, plen) +
                  detail::random_completion(rng, cfg, clen));
  }
  return out;
}

// ---- collation ----

// A tokenized example row: [begin][prompt][completion][end].
struct TokenizedRow {
  std::vector<std::int32_t> tokens;
  std::int64_t prompt_len = 0;  // begin token + surviving prompt tokens
};

// Prompts truncate from the left (recent context survives), completions from
// the right; the end token is appended after the completion and is scored as
// part of it.
inline TokenizedRow tokenize_example(const Tokenizer& tok, const std::string& prompt,
                                     const std::string& completion, std::int64_t max_prompt_len,
                                     std::int64_t max_completion_len) {
  std::vector<std::int32_t> p = tok.tokenize(prompt);
  std::vector<std::int32_t> c = tok.tokenize(completion);
  if (static_cast<std::int64_t>(p.size()) > max_prompt_len) {
    p.erase(p.begin(), p.end() - max_prompt_len);
  }
  if (static_cast<std::int64_t>(c.size()) > max_completion_len) {
    c.resize(static_cast<std::size_t>(max_completion_len));
  }
  TokenizedRow row;
  row.tokens.push_back(Tokenizer::begin_id);
  row.tokens.insert(row.tokens.end(), p.begin(), p.end());
  row.prompt_len = static_cast<std::int64_t>(row.tokens.size());
  row.tokens.insert(row.tokens.end(), c.begin(), c.end());
  row.tokens.push_back(Tokenizer::end_id);
  return row;
}

inline bool completion_survives(const TokenizedRow& row) {
  // prompt_len positions of prompt, then completion + end token; an empty
  // completion leaves only the end token.
  return static_cast<std::int64_t>(row.tokens.size()) - row.prompt_len >= 2;
}

template <typename T>
SequenceBatchT<T> batch_from_rows(const std::vector<TokenizedRow>& rows, std::int64_t pad_to = 0) {
  std::int64_t t = pad_to;
  for (const auto& r : rows) t = std::max<std::int64_t>(t, static_cast<std::int64_t>(r.tokens.size()));
  const std::int64_t b = static_cast<std::int64_t>(rows.size());
  SequenceBatchT<T> batch;
  batch.token_ids = ITensor({b, t});
  batch.attention_mask = TensorT<T>({b, t});
  batch.completion_mask = TensorT<T>({b, t});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    const std::int64_t len = static_cast<std::int64_t>(row.tokens.size());
    for (std::int64_t j = 0; j < len; ++j) {
      batch.token_ids[i * t + j] = row.tokens[static_cast<std::size_t>(j)];
      batch.attention_mask[i * t + j] = T(1);
      batch.completion_mask[i * t + j] = j >= row.prompt_len ? T(1) : T(0);
    }
    // pad_id already zero-initialized; masks zero beyond len
  }
  batch.validate();
  return batch;
}

template <typename T>
struct CollatedPairT {
  SequenceBatchT<T> chosen;
  SequenceBatchT<T> rejected;
  std::vector<std::size_t> kept_indices;  // into the input triple list
  std::int64_t skipped = 0;               // rows whose completion truncated away
};

using CollatedPair = CollatedPairT<double>;

template <typename T>
CollatedPairT<T> collate_batch(const std::vector<PreferenceTriple>& triples, const Tokenizer& tok,
                               std::int64_t max_prompt_len, std::int64_t max_completion_len) {
  if (triples.empty()) throw std::invalid_argument("collate_batch: empty triple list");
  CollatedPairT<T> out;
  std::vector<TokenizedRow> chosen_rows, rejected_rows;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    t.validate();
    TokenizedRow c = tokenize_example(tok, t.prompt, t.chosen, max_prompt_len, max_completion_len);
    TokenizedRow r = tokenize_example(tok, t.prompt, t.rejected, max_prompt_len, max_completion_len);
    if (!completion_survives(c) || !completion_survives(r)) {
      ++out.skipped;
      continue;
    }
    chosen_rows.push_back(std::move(c));
    rejected_rows.push_back(std::move(r));
    out.kept_indices.push_back(i);
  }
  if (chosen_rows.empty()) {
    throw std::invalid_argument("collate_batch: every completion truncated to zero tokens");
  }
  // Pad the pair to a common length so the two batches stay row-aligned.
  std::int64_t t = 0;
  for (const auto& r : chosen_rows) t = std::max<std::int64_t>(t, static_cast<std::int64_t>(r.tokens.size()));
  for (const auto& r : rejected_rows) t = std::max<std::int64_t>(t, static_cast<std::int64_t>(r.tokens.size()));
  out.chosen = batch_from_rows<T>(chosen_rows, t);
  out.rejected = batch_from_rows<T>(rejected_rows, t);
  return out;
}

// Seeded split into (train, validation) without replacement.
inline std::pair<std::vector<PreferenceTriple>, std::vector<PreferenceTriple>> split_dataset(
    const std::vector<PreferenceTriple>& triples, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("split_dataset: val_fraction must be in [0, 1)");
  }
  std::vector<std::size_t> idx(triples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(i))]);
  }
  const auto n_val = static_cast<std::size_t>(static_cast<double>(triples.size()) * val_fraction);
  std::pair<std::vector<PreferenceTriple>, std::vector<PreferenceTriple>> out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < n_val ? out.second : out.first).push_back(triples[idx[i]]);
  }
  return out;
}

}  // namespace mmpo
