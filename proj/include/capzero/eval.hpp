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

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capzero/scoring.hpp"

namespace capzero {

std::string objective_label(Objective objective, double alpha);

struct ClassificationReport {
  std::vector<int> predictions;  // per image
  std::vector<int> classes;      // sorted class ids; index space of the tables
  // Filled when ground truth is supplied.
  std::size_t num_images = 0;
  std::size_t num_correct = 0;
  double top1 = 0.0;
  std::vector<std::size_t> class_counts;
  std::vector<double> per_class_accuracy;  // NaN for classes with no images
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  Objective objective = Objective::kMle;
  double alpha = 0.0;
};

// Prompt-ensemble voting. Per prompt index, the best-scoring class gets a
// vote (ties: lowest class_id). Most votes wins; ties go to the larger
// summed score over the class's prompts, then the lowest class_id.
// Every class must carry the same prompt indices. `truth` may be empty.
ClassificationReport classify_voting(const ScoreMatrix& scores,
                                     const CandidateSet& candidates,
                                     std::span<const int> truth = {});

// Throws ContractError on length mismatch or fewer than two points and
// DegenerateInputError when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct PccReport {
  double mean_pcc = 0.0;
  std::vector<double> per_image;        // NaN where excluded
  std::vector<std::size_t> excluded;    // image indices with zero variance
  std::string pair;                     // e.g. "logP(T) vs ig:0.8"
};

// Per image, PCC between the prior vector and the objective row
// (mle row, or mle row - alpha * prior for kIg), averaged over images.
PccReport mean_image_pcc(const ScoreMatrix& mle, const PriorCache& prior,
                         Objective objective, double alpha);

enum class RetrievalDirection { kImageToText, kTextToImage };
std::string to_string(RetrievalDirection d);

struct RetrievalReport {
  RetrievalDirection direction = RetrievalDirection::kImageToText;
  std::vector<std::size_t> ks;
  std::vector<double> recalls;  // parallel to ks
  std::size_t num_queries = 0;
};

// truth[i] lists the correct candidate columns for image i.
using TruthMap = std::vector<std::vector<std::size_t>>;

// Image-to-text ranks columns of each row; text-to-image ranks rows of each
// column, querying only captions that are correct for some image. Higher
// scores rank first; ties go to the lower index. K larger than the ranked
// set is a ContractError.
std::vector<RetrievalReport> retrieval_recalls(const ScoreMatrix& scores,
                                               const TruthMap& truth,
                                               std::vector<std::size_t> ks = {1, 5, 10});

struct SweepRow {
  double alpha = 0.0;
  double top1 = 0.0;
  double mean_pcc = 0.0;
  std::size_t r_excluded = 0;
};

std::vector<double> default_alpha_grid();  // 0.0, 0.1, ..., 1.0

std::vector<SweepRow> alpha_sweep(const ScoreMatrix& mle, const PriorCache& prior,
                                  const CandidateSet& candidates,
                                  std::span<const int> labels,
                                  std::span<const double> grid);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct EvalReport {
  std::string timestamp;
  std::string config_hash;
  std::string checkpoint_fingerprint;
  std::string objective;
  std::string prior_source;
  std::optional<ClassificationReport> classification;
  std::vector<PccReport> pcc;
  std::vector<RetrievalReport> retrieval;
  std::vector<SweepRow> sweep;
};

// Machine-readable form; `timestamp` is the only wall-clock field.
std::string report_json(const EvalReport& report);
// Aligned-column text for people.
std::string report_text(const EvalReport& report);

}  // namespace capzero
