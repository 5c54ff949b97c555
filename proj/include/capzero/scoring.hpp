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
#include <span>
#include <string>
#include <vector>

#include "capzero/dataset.hpp"
#include "capzero/model.hpp"
#include "capzero/vocab.hpp"

namespace capzero {

// Candidate captions with their class labels and prompt indices.
struct CandidateSet {
  std::vector<std::vector<int>> captions;  // BOS ... EOS
  std::vector<int> labels;
  std::vector<int> prompt_index;
  std::vector<std::string> texts;  // optional; empty or one per caption

  std::size_t size() const { return captions.size(); }
  // Throws ContractError on empty sets, ragged fields or duplicate
  // (class_id, prompt_index) pairs.
  void validate() const;

  // Encodes a prompt table; unknown words raise OovError.
  static CandidateSet from_prompts(const std::vector<PromptEntry>& prompts,
                                   const Vocab& vocab);
};

enum class PriorSource { kUnimodalMode, kZeroImage, kExternalLm };

std::string to_string(PriorSource source);
PriorSource parse_prior_source(const std::string& text);

struct PriorCache {
  std::vector<double> logp;  // log P(T_j) per candidate
  PriorSource source = PriorSource::kUnimodalMode;
  std::string fingerprint;  // of the model that produced the values
};

struct ScoreOptions {
  // Divide each caption score by its number of predicted tokens.
  bool length_normalize = false;
  // Threads over images; results do not depend on the count.
  std::size_t workers = 1;
};

// Throws ContractError if any candidate token falls outside the model vocab.
void check_vocab(const CaptionerModel& model, const CandidateSet& candidates);

// kUnimodalMode and kExternalLm score with the given model's null
// conditioning (for kExternalLm the model is the separate language model);
// kZeroImage conditions on an all-zeros raster.
PriorCache build_prior_cache(const CaptionerModel& model, const CandidateSet& candidates,
                             PriorSource source, const ScoreOptions& options = {});

enum class Objective { kMle, kIg };

struct ScoreMatrix {
  std::size_t rows = 0;  // images
  std::size_t cols = 0;  // candidates
  std::vector<double> values;  // row-major
  Objective objective = Objective::kMle;
  double alpha = 0.0;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t r, std::size_t c, Objective obj = Objective::kMle,
              double a = 0.0)
      : rows(r), cols(c), values(r * c, 0.0), objective(obj), alpha(a) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
  bool operator==(const ScoreMatrix&) const = default;
};

// values[i][j] = log P(T_j | I_i).
ScoreMatrix score_mle(const CaptionerModel& model, std::span<const Image* const> images,
                      const CandidateSet& candidates, const ScoreOptions& options = {});
ScoreMatrix score_mle(const CaptionerModel& model, const Dataset& images,
                      const CandidateSet& candidates, const ScoreOptions& options = {});

// out[i][j] = mle[i][j] - alpha * prior[j]; alpha in [0, 1].
ScoreMatrix score_ig(const ScoreMatrix& mle, const PriorCache& prior, double alpha);

// MLE from `cap_model` minus alpha times the prior of `lm_model`.
ScoreMatrix score_lm_plus_cap(const CaptionerModel& cap_model,
                              const CaptionerModel& lm_model,
                              std::span<const Image* const> images,
                              const CandidateSet& candidates, double alpha = 1.0,
                              const ScoreOptions& options = {});

std::string score_matrix_to_bytes(const ScoreMatrix& m);
ScoreMatrix score_matrix_from_bytes(const std::string& bytes);
void save_score_matrix(const ScoreMatrix& m, const std::filesystem::path& path);
ScoreMatrix load_score_matrix(const std::filesystem::path& path);
// Sidecar manifest: "column\tclass_id\tprompt_index" per candidate.
void save_column_manifest(const CandidateSet& candidates,
                          const std::filesystem::path& path);

void save_prior_cache(const PriorCache& prior, const std::filesystem::path& path);
PriorCache load_prior_cache(const std::filesystem::path& path);

}  // namespace capzero
