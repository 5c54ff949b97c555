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

#include "testing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <unistd.h>

#include "capzero/errors.hpp"

namespace capzero::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("capzero_" + tag + "_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TinyCorpus tiny_corpus(int classes, int prompts, std::size_t train,
                       std::size_t image_size, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.prompts_per_class = prompts;
  spec.image_size = image_size;
  spec.cell_size = image_size / 2;
  spec.mark_size = image_size / 4;
  spec.num_train = train;
  spec.eval_per_class = 2;
  spec.seed = seed;
  TinyCorpus t;
  t.corpus = generate_synthetic(spec);
  t.vocab = Vocab::build(corpus_texts(t.corpus));
  encode_captions(t.corpus.train, t.vocab);
  encode_captions(t.corpus.eval, t.vocab);
  return t;
}

ModelConfig tiny_model_config(std::size_t vocab_size, std::size_t layers) {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.channels = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.encoder_layers = layers;
  c.decoder_layers = layers;
  c.vocab_size = vocab_size;
  c.max_len = 8;
  c.init_std = 0.3;
  c.seed = 11;
  return c;
}

GradCheckResult grad_check(ParameterStore& params, const std::function<double()>& loss,
                           double h) {
  GradCheckResult r;
  for (Parameter& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = loss();
      p.value[i] = saved - h;
      const double down = loss();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++r.checked;
      if (rel > r.worst_rel_error) {
        r.worst_rel_error = rel;
        r.worst_name = p.name;
        r.worst_index = i;
      }
    }
  }
  return r;
}

std::vector<int> voting_oracle(const ScoreMatrix& s, const CandidateSet& c) {
  std::vector<int> out;
  std::set<int> prompt_ids(c.prompt_index.begin(), c.prompt_index.end());
  std::set<int> class_ids(c.labels.begin(), c.labels.end());
  for (std::size_t i = 0; i < s.rows; ++i) {
    std::map<int, int> votes;
    std::map<int, double> sums;
    for (int k : class_ids) votes[k] = 0, sums[k] = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) sums[c.labels[j]] += s.at(i, j);
    for (int p : prompt_ids) {
      std::vector<std::pair<double, int>> opts;
      for (std::size_t j = 0; j < c.size(); ++j) {
        if (c.prompt_index[j] == p) opts.emplace_back(s.at(i, j), c.labels[j]);
      }
      std::sort(opts.begin(), opts.end(), [](auto a, auto b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      ++votes[opts.front().second];
    }
    std::vector<int> ks(class_ids.begin(), class_ids.end());
    std::sort(ks.begin(), ks.end(), [&](int a, int b) {
      if (votes[a] != votes[b]) return votes[a] > votes[b];
      if (sums[a] != sums[b]) return sums[a] > sums[b];
      return a < b;
    });
    out.push_back(ks.front());
  }
  return out;
}

std::vector<double> recall_oracle(const ScoreMatrix& s, const TruthMap& truth,
                                  const std::vector<std::size_t>& ks, bool image_to_text) {
  std::vector<std::vector<std::size_t>> queries_truth;
  std::vector<std::vector<double>> query_scores;
  if (image_to_text) {
    for (std::size_t i = 0; i < s.rows; ++i) {
      queries_truth.push_back(truth[i]);
      query_scores.emplace_back(s.row(i).begin(), s.row(i).end());
    }
  } else {
    for (std::size_t j = 0; j < s.cols; ++j) {
      std::vector<std::size_t> imgs;
      for (std::size_t i = 0; i < s.rows; ++i) {
        if (std::find(truth[i].begin(), truth[i].end(), j) != truth[i].end()) imgs.push_back(i);
      }
      if (imgs.empty()) continue;
      queries_truth.push_back(imgs);
      std::vector<double> col;
      for (std::size_t i = 0; i < s.rows; ++i) col.push_back(s.at(i, j));
      query_scores.push_back(col);
    }
  }
  std::vector<double> out;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries_truth.size(); ++q) {
      std::vector<std::size_t> order(query_scores[q].size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        return query_scores[q][a] > query_scores[q][b];
      });
      bool hit = false;
      for (std::size_t r = 0; r < k; ++r) {
        hit |= std::find(queries_truth[q].begin(), queries_truth[q].end(), order[r]) !=
               queries_truth[q].end();
      }
      hits += hit;
    }
    out.push_back(static_cast<double>(hits) / static_cast<double>(queries_truth.size()));
  }
  return out;
}

}  // namespace capzero::testing
