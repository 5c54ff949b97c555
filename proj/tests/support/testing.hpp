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
#include <functional>
#include <string>
#include <vector>

#include "capzero/eval.hpp"
#include "capzero/model.hpp"
#include "capzero/scoring.hpp"
#include "capzero/synthetic.hpp"
#include "capzero/vocab.hpp"

namespace capzero::testing {

// Fresh empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

// A small corpus plus its vocab with captions encoded.
struct TinyCorpus {
  SyntheticCorpus corpus;
  Vocab vocab;
};
TinyCorpus tiny_corpus(int classes = 3, int prompts = 2, std::size_t train = 24,
                       std::size_t image_size = 8, std::uint64_t seed = 7);

// Model sized for a tiny corpus: image 8, patch 4, d 8, 2 heads.
ModelConfig tiny_model_config(std::size_t vocab_size, std::size_t layers = 1);

struct GradCheckResult {
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients in `params` (already filled by one backward of
// `loss`) against central differences of `loss` with step h. Relative error
// is |a - n| / max(1e-8, |a| + |n|) per coordinate.
GradCheckResult grad_check(ParameterStore& params, const std::function<double()>& loss,
                           double h = 1e-5);

// Brute-force prompt voting: explicit tallies, then a sort by
// (votes desc, summed score desc, class asc).
std::vector<int> voting_oracle(const ScoreMatrix& s, const CandidateSet& c);

// Brute-force recall@K from a full stable sort of every query's ranking.
std::vector<double> recall_oracle(const ScoreMatrix& s, const TruthMap& truth,
                                  const std::vector<std::size_t>& ks, bool image_to_text);

}  // namespace capzero::testing
