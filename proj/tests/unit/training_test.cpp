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

#include <cmath>
#include <cstring>

#include <catch2/catch_amalgamated.hpp>

#include "capzero/checkpoint.hpp"
#include "capzero/errors.hpp"
#include "capzero/training.hpp"
#include "testing.hpp"

namespace capzero {
namespace {

std::vector<const MultimodalExample*> take(const Dataset& d, std::size_t first,
                                           std::size_t count) {
  std::vector<const MultimodalExample*> out;
  for (std::size_t i = first; i < first + count; ++i) out.push_back(&d[i % d.size()]);
  return out;
}

double grad_abs_sum(const ParameterStore& ps, const std::string& name) {
  double s = 0.0;
  for (const Parameter& p : ps) {
    if (p.name == name) {
      for (double v : p.grad.values()) s += std::abs(v);
    }
  }
  return s;
}

TEST_CASE("train config schedule") {
  TrainConfig c;
  c.steps = 100;
  c.peak_lr = 1.0;
  c.validate();
  CHECK(c.warmup_steps() == 5);
  CHECK(c.lr_at(0) == Catch::Approx(0.2));
  CHECK(c.lr_at(4) == Catch::Approx(1.0));
  CHECK(c.lr_at(5) == Catch::Approx(1.0));
  CHECK(c.lr_at(99) < 0.01);
  for (std::size_t s = 5; s + 1 < 100; ++s) CHECK(c.lr_at(s + 1) <= c.lr_at(s));
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = TrainConfig{};
  bad.beta = 0.0;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = TrainConfig{};
  bad.gamma = -1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("losses at near-uniform init") {
  auto tc = testing::tiny_corpus(4, 2, 16);
  ModelConfig c = testing::tiny_model_config(tc.vocab.size());
  c.init_std = 0.002;
  const CaptionerModel m(c);
  const auto batch = take(tc.corpus.train, 0, 8);
  const double ln_v = std::log(static_cast<double>(c.vocab_size));
  const double multi = multimodal_loss_value(m, batch);
  const double uni = unimodal_loss_value(m, batch);
  CHECK(std::abs(multi - ln_v) <= 0.05 * ln_v);
  CHECK(std::abs(uni - ln_v) <= 0.05 * ln_v);
  CHECK(std::abs(multi - uni) < 0.5);
}

TEST_CASE("batch reductions") {
  auto tc = testing::tiny_corpus(3, 2, 8);
  const CaptionerModel m(testing::tiny_model_config(tc.vocab.size()));
  const auto& d = tc.corpus.train;
  const auto one = take(d, 0, 1);
  // B=1: token-mean NLL of that one caption.
  const auto& t = d[0].tokens;
  const Tensor mem = m.encode_image(d[0].image);
  const double manual = -m.sequence_logprob(t, &mem) / static_cast<double>(t.size() - 1);
  CHECK(multimodal_loss_value(m, one) == Catch::Approx(manual).epsilon(1e-12));

  const auto a = take(d, 0, 1), b = take(d, 1, 1), ab = take(d, 0, 2);
  CHECK(std::abs(multimodal_loss_value(m, ab) -
                 0.5 * (multimodal_loss_value(m, a) + multimodal_loss_value(m, b))) <= 1e-12);
  CHECK(std::abs(unimodal_loss_value(m, ab) -
                 0.5 * (unimodal_loss_value(m, a) + unimodal_loss_value(m, b))) <= 1e-12);

  std::vector<const MultimodalExample*> empty;
  CHECK_THROWS_AS(multimodal_loss_value(m, empty), ContractError);
}

TEST_CASE("unimodal loss ignores images") {
  auto tc = testing::tiny_corpus(3, 2, 8);
  const CaptionerModel m(testing::tiny_model_config(tc.vocab.size()));
  Dataset swapped = tc.corpus.train;
  for (auto& ex : swapped) {
    for (double& p : ex.image.pixels) p = 1.0 - p;
  }
  CHECK(unimodal_loss_value(m, take(tc.corpus.train, 0, 4)) ==
        unimodal_loss_value(m, take(swapped, 0, 4)));
}

TEST_CASE("combined loss identities") {
  auto tc = testing::tiny_corpus(3, 2, 12);
  CaptionerModel m(testing::tiny_model_config(tc.vocab.size()));
  const auto batch = take(tc.corpus.train, 0, 4);
  const double a = multimodal_loss_value(m, batch);
  const double b = unimodal_loss_value(m, batch);
  auto combined = [&](double beta, double gamma) {
    Graph g;
    CaptionerModel::Binder bind(g, std::as_const(m.parameters()));
    return combined_loss(m, bind, batch, beta, gamma).total.value().item();
  };
  CHECK(combined(1.0, 0.0) == a);
  CHECK(combined(0.0, 1.0) == b);
  CHECK(std::abs(combined(1.5, 0.5) - (1.5 * a + 0.5 * b)) <= 1e-12);
  CHECK_THROWS_AS(combined(0.0, 0.0), ContractError);
  CHECK_THROWS_AS(combined(-1.0, 1.0), ContractError);
}

TEST_CASE("gradient flow follows the loss weights") {
  auto tc = testing::tiny_corpus(3, 2, 12);
  CaptionerModel m(testing::tiny_model_config(tc.vocab.size()));
  const auto batch = take(tc.corpus.train, 0, 4);
  auto grads = [&](double beta, double gamma) {
    m.parameters().zero_grad();
    Graph g;
    CaptionerModel::Binder bind(g, m.parameters());
    g.backward(combined_loss(m, bind, batch, beta, gamma).total);
  };
  grads(1.0, 0.0);
  CHECK(grad_abs_sum(m.parameters(), CaptionerModel::kNullEmbedding) == 0.0);
  grads(0.0, 1.0);
  for (const auto& name : m.encoder_parameter_names()) {
    CHECK(grad_abs_sum(m.parameters(), name) == 0.0);
  }
  grads(1.5, 0.5);
  CHECK(grad_abs_sum(m.parameters(), CaptionerModel::kNullEmbedding) > 0.0);
  CHECK(grad_abs_sum(m.parameters(), "enc.patch.w") > 0.0);
}

TEST_CASE("end-to-end gradient check on a tiny captioner") {
  auto tc = testing::tiny_corpus(3, 2, 8);
  CaptionerModel m(testing::tiny_model_config(tc.vocab.size()));
  REQUIRE(m.parameters().value_count() <= 5000);
  const auto batch = take(tc.corpus.train, 0, 2);
  auto loss = [&](bool grad) {
    Graph g;
    g.set_requires_grad(grad);
    if (grad) {
      CaptionerModel::Binder bind(g, m.parameters());
      Var l = combined_loss(m, bind, batch, 1.5, 0.5).total;
      g.backward(l);
      return l.value().item();
    }
    CaptionerModel::Binder bind(g, std::as_const(m.parameters()));
    return combined_loss(m, bind, batch, 1.5, 0.5).total.value().item();
  };
  m.parameters().zero_grad();
  loss(true);
  const auto r = testing::grad_check(m.parameters(), [&] { return loss(false); });
  INFO("worst " << r.worst_name << "[" << r.worst_index << "] " << r.worst_rel_error);
  CHECK(r.checked == m.parameters().value_count());
  CHECK(r.worst_rel_error <= 1e-4);
}

TEST_CASE("batch sampler walks shuffled epochs") {
  BatchSampler s(10, 4, 3);
  std::vector<int> seen(10, 0);
  for (int i = 0; i < 5; ++i) {
    for (std::size_t id : s.next()) ++seen[id];
  }
  for (int n : seen) CHECK(n == 2);
  BatchSampler a(7, 3, 1), b(7, 3, 1);
  for (int i = 0; i < 6; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("training loop") {
  auto tc = testing::tiny_corpus(3, 2, 64);
  const ModelConfig c = testing::tiny_model_config(tc.vocab.size());

  SECTION("zero steps leave the model unchanged") {
    CaptionerModel m(c);
    const std::string before = serialize_checkpoint(m.parameters());
    TrainConfig cfg;
    cfg.steps = 0;
    CHECK(train(m, tc.corpus.train, cfg).empty());
    CHECK(serialize_checkpoint(m.parameters()) == before);
  }

  SECTION("same seed gives identical checkpoints and logs") {
    TrainConfig cfg;
    cfg.steps = 15;
    cfg.batch_size = 8;
    CaptionerModel a(c), b(c);
    const auto la = train(a, tc.corpus.train, cfg);
    const auto lb = train(b, tc.corpus.train, cfg);
    CHECK(serialize_checkpoint(a.parameters()) == serialize_checkpoint(b.parameters()));
    REQUIRE(la.size() == 15);
    for (std::size_t i = 0; i < la.size(); ++i) {
      CHECK(la[i].combined == lb[i].combined);
      CHECK(la[i].step == i + 1);
      CHECK(std::abs(la[i].combined - (cfg.beta * la[i].l_multi + cfg.gamma * la[i].l_uni)) <=
            1e-12);
    }
  }

  SECTION("checkpoint hook cadence") {
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch_size = 4;
    cfg.eval_every = 3;
    std::vector<std::size_t> hits;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](std::size_t step, const CaptionerModel&) { hits.push_back(step); };
    CaptionerModel m(c);
    train(m, tc.corpus.train, cfg, hooks);
    CHECK(hits == std::vector<std::size_t>{3, 6, 9});
  }

  SECTION("non-finite loss aborts with step and batch ids") {
    CaptionerModel m(c);
    m.parameters().get("dec.out.w").value.fill(1e300);
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 2;
    try {
      train(m, tc.corpus.train, cfg);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("step 1") != std::string::npos);
      CHECK(msg.find("batch ids") != std::string::npos);
    }
  }

  SECTION("empty dataset is rejected") {
    CaptionerModel m(c);
    CHECK_THROWS_AS(train(m, Dataset{}, TrainConfig{}), ContractError);
  }
}

TEST_CASE("300 steps halve the combined loss") {
  auto tc = testing::tiny_corpus(10, 2, 2000, 16, 5);
  ModelConfig c = testing::tiny_model_config(tc.vocab.size());
  c.image_size = 16;
  c.patch_size = 8;
  c.d_model = 16;
  c.init_std = 0.1;
  CaptionerModel m(c);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 16;
  cfg.peak_lr = 3e-3;
  const auto log = train(m, tc.corpus.train, cfg);
  CHECK(log.back().combined <= 0.5 * log.front().combined);
}

TEST_CASE("train log csv schema") {
  testing::TempDir dir("trainlog");
  std::vector<TrainLogRecord> log(2);
  log[0] = {1, 2.0, 3.0, 4.5, 0.25, 3e-4, 0.01};
  log[1] = {2, 1.0, 2.0, 2.5, 0.5, 3e-4, 0.02};
  write_train_log(log, dir / "train.csv");
  const std::string text = testing::read_file(dir / "train.csv");
  CHECK(text.rfind("step,l_multi,l_uni,L,grad_norm,seconds\n", 0) == 0);
  CHECK(text.find("\n1,2,3,4.5,0.25,0.010000\n") != std::string::npos);
}

}  // namespace
}  // namespace capzero
