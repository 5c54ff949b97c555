// Copyright 2026 The capzero Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "capzero/eval.hpp"
#include "capzero/model.hpp"
#include "capzero/scoring.hpp"
#include "capzero/synthetic.hpp"
#include "capzero/training.hpp"

namespace capzero {

// Parsed form of eval.objective: "mle", "ig:A", "zero_image:A",
// "lm_plus_cap" or "lm_plus_cap:A".
struct ObjectiveSpec {
  enum class Kind { kMle, kIg, kZeroImage, kLmPlusCap };
  Kind kind = Kind::kMle;
  double alpha = 0.0;

  std::string to_string() const;
  static ObjectiveSpec parse(const std::string& text);  // ConfigError
};

struct EvalSettings {
  std::string objective = "mle";
  // Prior used by `sweep`.
  PriorSource sweep_prior = PriorSource::kUnimodalMode;
  std::vector<double> grid = default_alpha_grid();
  bool length_normalize = false;
  bool retrieval = true;
  std::vector<std::size_t> recall_ks = {1, 5, 10};
  // Reuse score/prior files in the eval directory when their keys match.
  bool reuse_cache = true;
  // Separate language model for lm_plus_cap; empty means the captioner's
  // own unimodal mode.
  std::string lm_checkpoint;
};

// Everything a command needs. Paths are derived from output_dir:
//   data/   train.jsonl eval.jsonl images/ prompts.tsv vocab.txt summary.txt
//   model/  checkpoint.bin model.manifest vocab.txt train_log.csv
//   eval/   scores_mle.bin columns.tsv prior_*.bin report.json report.txt
//   sweep/  sweep.csv
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::size_t workers = 1;
  SyntheticSpec synthetic;
  ModelConfig model;  // image_size, channels, vocab_size follow the data
  TrainConfig train;
  EvalSettings eval;

  // Sectioned "key = value" text; parse(serialize()) reproduces the config.
  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  // Applies "section.key=value". Unknown keys raise ConfigError.
  void set(const std::string& assignment);
  void set(const std::string& section, const std::string& key, const std::string& value);

  // Copies the run seed into the sections and checks each one.
  void resolve();

  // FNV-1a over the serialized settings, leaving out paths, run.workers and
  // eval.reuse_cache.
  std::string hash() const;

  // output_dir, placed under $CAPZERO_OUTPUT_ROOT when that is set and the
  // directory is relative.
  std::filesystem::path output_root() const;
  std::filesystem::path data_dir() const { return output_root() / "data"; }
  std::filesystem::path model_dir() const { return output_root() / "model"; }
  std::filesystem::path eval_dir() const { return output_root() / "eval"; }
  std::filesystem::path sweep_dir() const { return output_root() / "sweep"; }
};

inline constexpr const char* kOutputRootEnv = "CAPZERO_OUTPUT_ROOT";

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

int exit_code_for(const std::exception& e);

struct GenSummary {
  std::vector<std::size_t> class_counts;  // training captions per class
  // count[0] / count[1] and its expected value 2^s.
  double skew_ratio = 0.0;
  double expected_ratio = 0.0;
  // Least-squares slope of log count on log rank, negated.
  double fitted_skew = 0.0;
  std::size_t num_train = 0;
  std::size_t num_eval = 0;
  std::size_t vocab_size = 0;
};

struct TrainOutcome {
  std::vector<TrainLogRecord> log;
  std::string fingerprint;
};

struct EvalOutcome {
  EvalReport report;
  bool scored_model = false;  // false when every matrix came from cache
};

struct SweepOutcome {
  std::vector<SweepRow> rows;
  bool scored_model = false;
};

// Commands write their artifacts and print the resolved config and a short
// summary to `log` (may be null).
GenSummary cmd_gen(const RunConfig& config, std::ostream* log);
TrainOutcome cmd_train(const RunConfig& config, std::ostream* log);
EvalOutcome cmd_eval(const RunConfig& config, std::ostream* log);
SweepOutcome cmd_sweep(const RunConfig& config, std::ostream* log);

// Full command-line entry; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace capzero
