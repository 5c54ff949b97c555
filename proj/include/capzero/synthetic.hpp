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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "capzero/dataset.hpp"

namespace capzero {

// Parameters of the synthetic skewed-prior corpus. Each class owns a colored
// square at a fixed grid cell; images add Gaussian pixel noise. Training
// classes follow a Zipf law with exponent `prior_skew`, so the caption
// marginal is skewed, while the evaluation split is class-balanced.
struct SyntheticSpec {
  int num_classes = 10;
  int prompts_per_class = 8;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t cell_size = 8;
  std::size_t mark_size = 4;
  double background = 0.5;
  // Per-image mark strength, drawn uniformly from [signal_min, signal_max].
  double signal_min = 1.0;
  double signal_max = 1.0;
  double noise_sigma = 0.1;
  double prior_skew = 1.5;
  // Fraction of training pairs whose caption names a random class instead
  // of the pictured one (web-style mismatches). The named class is drawn
  // from Zipf(mismatch_skew): 0 is uniform, prior_skew matches the images,
  // larger values over-mention the popular classes.
  double mismatch_rate = 0.0;
  double mismatch_skew = 1.5;
  std::size_t num_train = 20000;
  std::size_t eval_per_class = 50;
  std::uint64_t seed = 0;

  // Throws ContractError on violated invariants.
  void validate() const;
};

struct ClassSignature {
  std::size_t cell_row = 0;
  std::size_t cell_col = 0;
  std::array<double, 3> color{};
};

struct SyntheticCorpus {
  Dataset train;
  Dataset eval;
  std::vector<PromptEntry> prompts;  // class-major, prompts_per_class each
  std::vector<std::string> class_names;
  std::vector<double> class_weights;  // normalized Zipf training prior
  std::vector<ClassSignature> signatures;
};

// Normalized Zipf weights: w_k proportional to (k + 1)^-s for k in [0, n).
std::vector<double> zipf_weights(int n, double s);

std::vector<std::string> default_class_names(int num_classes);
// Caption templates with "{}" standing for the class name.
const std::vector<std::string>& default_templates();
std::string fill_template(const std::string& templ, const std::string& name);

std::vector<ClassSignature> make_signatures(const SyntheticSpec& spec);

// Noise-free rendering of a class signature at the given strength.
Image render_clean(const SyntheticSpec& spec, const ClassSignature& sig,
                   double strength);

// Pure function of `spec` (including its seed). Captions are text only;
// tokens are filled in once a vocabulary exists.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Every caption and prompt of a corpus, for vocabulary construction.
std::vector<std::string> corpus_texts(const SyntheticCorpus& corpus);

}  // namespace capzero
