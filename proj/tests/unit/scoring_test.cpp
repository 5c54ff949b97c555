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

#include <algorithm>
#include <cmath>
#include <numeric>

#include <catch2/catch_amalgamated.hpp>

#include "capzero/errors.hpp"
#include "capzero/eval.hpp"
#include "capzero/scoring.hpp"
#include "capzero/training.hpp"
#include "testing.hpp"

namespace capzero {
namespace {

struct Fixture {
  testing::TinyCorpus tc = testing::tiny_corpus(3, 2, 8);
  CaptionerModel model{testing::tiny_model_config(tc.vocab.size())};
  CandidateSet candidates = CandidateSet::from_prompts(tc.corpus.prompts, tc.vocab);
  std::vector<const Image*> images() const {
    std::vector<const Image*> out;
    for (const auto& ex : tc.corpus.eval) out.push_back(&ex.image);
    return out;
  }
};

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
  return r;
}

TEST_CASE("candidate set validation") {
  Fixture f;
  CHECK(f.candidates.size() == 6);
  CandidateSet dup = f.candidates;
  dup.prompt_index[1] = dup.prompt_index[0];
  dup.labels[1] = dup.labels[0];
  CHECK_THROWS_AS(dup.validate(), ContractError);
  CHECK_THROWS_AS(CandidateSet{}.validate(), ContractError);
  std::vector<PromptEntry> oov{{0, 0, "a photo of a unicorn"}};
  CHECK_THROWS_AS(CandidateSet::from_prompts(oov, f.tc.vocab), OovError);
}

TEST_CASE("prior cache is transparent and image independent") {
  Fixture f;
  const PriorCache cache = build_prior_cache(f.model, f.candidates, PriorSource::kUnimodalMode);
  REQUIRE(cache.logp.size() == f.candidates.size());
  for (std::size_t j = 0; j < f.candidates.size(); ++j) {
    CHECK(cache.logp[j] == f.model.sequence_logprob(f.candidates.captions[j], nullptr));
    CHECK(std::isfinite(cache.logp[j]));
    CHECK(cache.logp[j] <= 0.0);
  }
  CHECK(cache.fingerprint == f.model.parameters().fingerprint());
  score_mle(f.model, f.images(), f.candidates);
  CHECK(build_prior_cache(f.model, f.candidates, PriorSource::kUnimodalMode).logp == cache.logp);

  const PriorCache zero = build_prior_cache(f.model, f.candidates, PriorSource::kZeroImage);
  const Tensor mem = f.model.encode_image(Image::zeros(8, 8, 3));
  CHECK(zero.logp[0] == f.model.sequence_logprob(f.candidates.captions[0], &mem));

  testing::TempDir dir("prior");
  save_prior_cache(cache, dir / "prior.bin");
  const PriorCache back = load_prior_cache(dir / "prior.bin");
  CHECK(back.logp == cache.logp);
  CHECK(back.fingerprint == cache.fingerprint);
}

TEST_CASE("vocab mismatch is rejected") {
  Fixture f;
  CandidateSet c = f.candidates;
  c.captions[0][1] = static_cast<int>(f.model.config().vocab_size) + 3;
  CHECK_THROWS_AS(build_prior_cache(f.model, c, PriorSource::kUnimodalMode), ContractError);
  CHECK_THROWS_AS(score_mle(f.model, f.images(), c), ContractError);
  ModelConfig other = f.model.config();
  other.vocab_size += 1;
  const CaptionerModel lm(other);
  CHECK_THROWS_AS(score_lm_plus_cap(f.model, lm, f.images(), f.candidates), ContractError);
}

TEST_CASE("score_mle") {
  Fixture f;
  const auto images = f.images();
  SECTION("1x1 equals sequence_logprob") {
    CandidateSet one;
    one.captions = {f.candidates.captions[2]};
    one.labels = {0};
    one.prompt_index = {0};
    const std::vector<const Image*> img{images[0]};
    const ScoreMatrix s = score_mle(f.model, img, one);
    const Tensor mem = f.model.encode_image(*images[0]);
    CHECK(s.rows == 1);
    CHECK(s.cols == 1);
    CHECK(s.at(0, 0) == f.model.sequence_logprob(one.captions[0], &mem));
  }
  SECTION("2x3 equals six independent calls") {
    CandidateSet three;
    for (std::size_t j : {0u, 3u, 5u}) {
      three.captions.push_back(f.candidates.captions[j]);
      three.labels.push_back(f.candidates.labels[j]);
      three.prompt_index.push_back(f.candidates.prompt_index[j]);
    }
    const std::vector<const Image*> two{images[0], images[3]};
    const ScoreMatrix s = score_mle(f.model, two, three);
    for (std::size_t i = 0; i < 2; ++i) {
      const Tensor mem = f.model.encode_image(*two[i]);
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(s.at(i, j) == f.model.sequence_logprob(three.captions[j], &mem));
      }
    }
  }
  SECTION("permuting candidates permutes columns") {
    const ScoreMatrix s = score_mle(f.model, images, f.candidates);
    CandidateSet perm;
    const std::vector<std::size_t> order{4, 1, 5, 0, 3, 2};
    for (std::size_t j : order) {
      perm.captions.push_back(f.candidates.captions[j]);
      perm.labels.push_back(f.candidates.labels[j]);
      perm.prompt_index.push_back(f.candidates.prompt_index[j]);
    }
    const ScoreMatrix p = score_mle(f.model, images, perm);
    for (std::size_t i = 0; i < s.rows; ++i) {
      for (std::size_t j = 0; j < order.size(); ++j) CHECK(p.at(i, j) == s.at(i, order[j]));
    }
  }
  SECTION("worker count does not change results") {
    ScoreOptions one, many;
    many.workers = 4;
    CHECK(score_mle(f.model, images, f.candidates, one) ==
          score_mle(f.model, images, f.candidates, many));
  }
  SECTION("length normalization divides by predicted tokens") {
    ScoreOptions norm;
    norm.length_normalize = true;
    const ScoreMatrix raw = score_mle(f.model, images, f.candidates);
    const ScoreMatrix n = score_mle(f.model, images, f.candidates, norm);
    for (std::size_t j = 0; j < raw.cols; ++j) {
      const double len = static_cast<double>(f.candidates.captions[j].size() - 1);
      CHECK(n.at(0, j) == Catch::Approx(raw.at(0, j) / len).epsilon(1e-14));
    }
  }
}

TEST_CASE("score_ig arithmetic") {
  ScoreMatrix mle(2, 2);
  mle.values = {-1.0, -2.0, -3.0, -4.0};
  PriorCache prior;
  prior.logp = {-0.5, -2.5};
  CHECK(score_ig(mle, prior, 0.0).values == mle.values);
  const ScoreMatrix s = score_ig(mle, prior, 0.8);
  CHECK(s.objective == Objective::kIg);
  CHECK(s.alpha == 0.8);
  // -1 + 0.4, -2 + 2.0, -3 + 0.4, -4 + 2.0
  CHECK(s.at(0, 0) == Catch::Approx(-0.6).epsilon(1e-15));
  CHECK(s.at(0, 1) == Catch::Approx(0.0).margin(1e-15));
  CHECK(s.at(1, 0) == Catch::Approx(-2.6).epsilon(1e-15));
  CHECK(s.at(1, 1) == Catch::Approx(-2.0).epsilon(1e-15));

  PriorCache same;
  same.logp = {-1.0, -7.0};
  CHECK(score_ig(mle, same, 1.0).at(0, 0) == 0.0);

  PriorCache shifted = prior;
  for (double& v : shifted.logp) v -= 13.0;
  for (double a : {0.1, 0.5, 1.0}) {
    const ScoreMatrix x = score_ig(mle, prior, a), y = score_ig(mle, shifted, a);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto rx = x.row(i), ry = y.row(i);
      CHECK(std::max_element(rx.begin(), rx.end()) - rx.begin() ==
            std::max_element(ry.begin(), ry.end()) - ry.begin());
    }
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(x.values[k] - (mle.values[k] - a * prior.logp[k % 2])) <= 1e-12);
    }
  }

  PriorCache wrong;
  wrong.logp = {-1.0};
  CHECK_THROWS_AS(score_ig(mle, wrong, 0.5), ContractError);
  CHECK_THROWS_AS(score_ig(mle, prior, 1.5), ContractError);
}

TEST_CASE("lm plus cap") {
  Fixture f;
  const auto images = f.images();
  const ScoreMatrix mle = score_mle(f.model, images, f.candidates);
  const PriorCache prior = build_prior_cache(f.model, f.candidates, PriorSource::kUnimodalMode);
  const ScoreMatrix lm_cap = score_lm_plus_cap(f.model, f.model, images, f.candidates);
  CHECK(lm_cap.values == score_ig(mle, prior, 1.0).values);

  ModelConfig other_cfg = f.model.config();
  other_cfg.seed = 77;
  const CaptionerModel lm(other_cfg);
  const ScoreMatrix mixed = score_lm_plus_cap(f.model, lm, images, f.candidates);
  for (std::size_t i = 0; i < mixed.rows; ++i) {
    for (std::size_t j = 0; j < mixed.cols; ++j) {
      const double expect =
          mle.at(i, j) - lm.sequence_logprob(f.candidates.captions[j], nullptr);
      CHECK(mixed.at(i, j) == expect);
    }
  }
}

TEST_CASE("score matrix persistence") {
  ScoreMatrix m(2, 3, Objective::kIg, 0.8);
  m.values = {-1.5, -2.25, -3.0, -0.125, -9.0, -4.5};
  testing::TempDir dir("scores");
  save_score_matrix(m, dir / "s.bin");
  CHECK(load_score_matrix(dir / "s.bin") == m);
  const std::string bytes = score_matrix_to_bytes(m);
  CHECK(bytes.size() == 28 + 6 * 8);
  CHECK_THROWS_AS(score_matrix_from_bytes(bytes.substr(0, 40)), ParseError);

  Fixture f;
  save_column_manifest(f.candidates, dir / "columns.tsv");
  const std::string text = testing::read_file(dir / "columns.tsv");
  CHECK(text.rfind("column\tclass_id\tprompt_index\n0\t0\t0\n1\t0\t1\n", 0) == 0);
}

TEST_CASE("zero-image and unimodal priors rank candidates alike after training") {
  auto tc = testing::tiny_corpus(4, 3, 800, 8, 6);
  ModelConfig c = testing::tiny_model_config(tc.vocab.size());
  c.d_model = 16;
  c.init_std = 0.1;
  CaptionerModel m(c);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 16;
  cfg.peak_lr = 3e-3;
  train(m, tc.corpus.train, cfg);
  const CandidateSet cands = CandidateSet::from_prompts(tc.corpus.prompts, tc.vocab);
  const PriorCache uni = build_prior_cache(m, cands, PriorSource::kUnimodalMode);
  const PriorCache zero = build_prior_cache(m, cands, PriorSource::kZeroImage);
  CHECK(uni.logp != zero.logp);
  CHECK(pearson(ranks(uni.logp), ranks(zero.logp)) > 0.5);
}

}  // namespace
}  // namespace capzero
