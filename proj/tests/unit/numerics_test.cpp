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
#include <functional>
#include <numeric>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "capzero/adam.hpp"
#include "capzero/autograd.hpp"
#include "capzero/checkpoint.hpp"
#include "capzero/errors.hpp"
#include "capzero/ops.hpp"
#include "capzero/random.hpp"
#include "capzero/tensor.hpp"
#include "testing.hpp"

namespace capzero {
namespace {

using Catch::Approx;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

// Builds a scalar from `f`'s output by a fixed random projection so that
// every output coordinate carries a distinct weight.
using OpFn = std::function<Var(Graph&, std::vector<Var>&)>;

double run_op(ParameterStore& ps, const OpFn& f, const Tensor* proj, bool grad) {
  Graph g;
  g.set_requires_grad(grad);
  std::vector<Var> in;
  for (Parameter& p : ps) in.push_back(grad ? g.parameter(p) : g.constant(p.value));
  Var out = f(g, in);
  Var loss = sum(mul(out, g.constant(*proj)));
  if (grad) g.backward(loss);
  return loss.value().item();
}

double op_grad_error(ParameterStore& ps, const OpFn& f, std::uint64_t seed = 3) {
  Rng rng(seed);
  Tensor proj;
  {
    Graph g;
    std::vector<Var> in;
    for (Parameter& p : ps) in.push_back(g.constant(p.value));
    proj = random_tensor(f(g, in).shape(), rng);
  }
  ps.zero_grad();
  run_op(ps, f, &proj, true);
  auto r = testing::grad_check(ps, [&] { return run_op(ps, f, &proj, false); });
  INFO("worst " << r.worst_name << "[" << r.worst_index << "] " << r.worst_rel_error);
  return r.worst_rel_error;
}

TEST_CASE("tensor shapes and accessors") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  t.at(1, 2) = 4.0;
  CHECK(t[5] == 4.0);
  CHECK_THROWS_AS(Tensor({2, 0}), ContractError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractError);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(7);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = c.normal();
    mean += x;
    sq += x * x;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
  std::vector<double> w{0.0, 1.0, 0.0};
  CHECK(c.categorical(w) == 1);
}

TEST_CASE("log_softmax uniform row") {
  Graph g;
  Var x = g.constant(Tensor({1, 4}, 0.0));
  const Tensor out = log_softmax(x).value();
  for (double v : out.values()) CHECK(v == Approx(-std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax is stable for large logits") {
  Graph g;
  const Tensor out = log_softmax(g.constant(Tensor({1, 2}, {1000.0, 0.0}))).value();
  CHECK(out.all_finite());
  CHECK(out[0] == Approx(0.0).margin(1e-12));
  CHECK(out[1] == Approx(-1000.0).epsilon(1e-12));
}

TEST_CASE("log_softmax matches extended precision oracle") {
  // log(e^x / sum e^x) for x = 1, 2, 3, evaluated in long double.
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  const double expect[] = {static_cast<double>(1.0L - std::log(z)),
                           static_cast<double>(2.0L - std::log(z)),
                           static_cast<double>(3.0L - std::log(z))};
  Graph g;
  const Tensor out = log_softmax(g.constant(Tensor({1, 3}, {1.0, 2.0, 3.0}))).value();
  for (int i = 0; i < 3; ++i) CHECK(out[i] == Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("log_softmax rows normalize and reject non-finite input") {
  Rng rng(5);
  Graph g;
  const Tensor out = log_softmax(g.constant(random_tensor({6, 9}, rng, 30.0))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    long double s = 0;
    for (std::size_t c = 0; c < 9; ++c) s += std::exp(static_cast<long double>(out.at(r, c)));
    CHECK(std::abs(static_cast<double>(std::log(s))) <= 1e-9);
  }
  Graph h;
  CHECK_THROWS_AS(
      h.constant(Tensor({1, 2}, {1.0, std::numeric_limits<double>::infinity()})),
      NumericError);
  // Finite but extreme logits stay finite.
  const Tensor wide =
      log_softmax(h.constant(Tensor({1, 2}, {1e300, -1e300}))).value();
  CHECK(wide[0] == 0.0);
}

TEST_CASE("cross_entropy_rows") {
  Graph g;
  std::vector<int> t{0, 3, 7};
  CHECK(cross_entropy_rows(g.constant(Tensor({3, 8}, 0.0)), t).value().item() ==
        Approx(std::log(8.0)).epsilon(1e-12));

  Tensor confident({2, 3}, -50.0);
  confident.at(0, 1) = 50.0;
  confident.at(1, 2) = 50.0;
  std::vector<int> t2{1, 2};
  CHECK(cross_entropy_rows(g.constant(confident), t2).value().item() < 1e-12);

  Rng rng(9);
  const Tensor logits = random_tensor({4, 5}, rng);
  std::vector<int> t3{4, 0, 2, 2};
  long double total = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    long double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(static_cast<long double>(logits.at(r, c)));
    total += std::log(z) - logits.at(r, static_cast<std::size_t>(t3[r]));
  }
  CHECK(cross_entropy_rows(g.constant(logits), t3).value().item() ==
        Approx(static_cast<double>(total / 4)).epsilon(1e-13));

  std::vector<int> bad{0, 5, 0, 0};
  CHECK_THROWS_AS(cross_entropy_rows(g.constant(logits), bad), IndexError);
}

TEST_CASE("backward basics") {
  ParameterStore ps;
  ps.add("x", Tensor({3}, {0.5, -1.0, 2.0}));
  ps.add("unused", Tensor({2}, 1.0));
  {
    Graph g;
    Var x = g.parameter(ps.get("x"));
    g.parameter(ps.get("unused"));
    g.backward(sum(x));
  }
  for (double v : ps.get("x").grad.values()) CHECK(v == 1.0);
  for (double v : ps.get("unused").grad.values()) CHECK(v == 0.0);

  ParameterStore q;
  q.add("x", Tensor({2}, {1.0, 2.0}));
  {
    Graph g;
    Var x = g.parameter(q.get("x"));
    g.backward(dot(x, x));
  }
  CHECK(q.get("x").grad[0] == 2.0);
  CHECK(q.get("x").grad[1] == 4.0);

  Graph g;
  Var v = g.constant(Tensor({2}, 1.0));
  CHECK_THROWS_AS(g.backward(v), ContractError);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(21);
  ParameterStore ps;
  ps.add("w", random_tensor({3, 4}, rng));
  ps.add("x", random_tensor({2, 3}, rng));
  auto l1 = [](Var x, Var w) { return sum(gelu(matmul(x, w))); };
  auto l2 = [](Var x, Var w) { return mean(mul(matmul(x, w), matmul(x, w))); };
  auto grads = [&](double a, double b) {
    ps.zero_grad();
    Graph g;
    Var w = g.parameter(ps.get("w"));
    Var x = g.parameter(ps.get("x"));
    g.backward(add(scale(l1(x, w), a), scale(l2(x, w), b)));
    return std::pair{ps.get("w").grad, ps.get("x").grad};
  };
  const auto [wa, xa] = grads(1.0, 0.0);
  const auto [wb, xb] = grads(0.0, 1.0);
  const auto [wc, xc] = grads(0.7, -1.3);
  for (std::size_t i = 0; i < wa.size(); ++i) {
    CHECK(std::abs(wc[i] - (0.7 * wa[i] - 1.3 * wb[i])) <= 1e-10);
  }
  for (std::size_t i = 0; i < xa.size(); ++i) {
    CHECK(std::abs(xc[i] - (0.7 * xa[i] - 1.3 * xb[i])) <= 1e-10);
  }
}

TEST_CASE("every op passes a finite-difference gradient check") {
  Rng rng(1);
  SECTION("add / sub / mul with broadcasting") {
    ParameterStore ps;
    ps.add("a", random_tensor({3, 4}, rng));
    ps.add("b", random_tensor({1, 4}, rng));
    ps.add("c", random_tensor({3, 1}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      return mul(sub(add(v[0], v[1]), v[2]), v[0]);
    }) <= 1e-4);
  }
  SECTION("matmul / linear / scale") {
    ParameterStore ps;
    ps.add("x", random_tensor({3, 5}, rng));
    ps.add("w", random_tensor({5, 2}, rng));
    ps.add("b", random_tensor({1, 2}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      return scale(linear(v[0], v[1], v[2]), -0.5);
    }) <= 1e-4);
  }
  SECTION("gelu") {
    ParameterStore ps;
    ps.add("x", random_tensor({4, 3}, rng, 2.0));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) { return gelu(v[0]); }) <= 1e-4);
  }
  SECTION("layer_norm") {
    ParameterStore ps;
    ps.add("x", random_tensor({3, 6}, rng));
    ps.add("g", random_tensor({1, 6}, rng));
    ps.add("b", random_tensor({1, 6}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      return layer_norm(v[0], v[1], v[2]);
    }) <= 1e-4);
  }
  SECTION("embedding") {
    ParameterStore ps;
    ps.add("table", random_tensor({5, 3}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      const std::vector<int> ids{4, 0, 4, 2};
      return embedding(v[0], ids);
    }) <= 1e-4);
  }
  SECTION("log_softmax / cross entropy / weighted nll") {
    ParameterStore ps;
    ps.add("logits", random_tensor({4, 6}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      return log_softmax(v[0]);
    }) <= 1e-4);
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      const std::vector<int> t{1, 5, 0, 3};
      return cross_entropy_rows(v[0], t);
    }) <= 1e-4);
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      const std::vector<int> t{1, 5, 0, 3};
      const std::vector<double> w{0.5, 0.25, 1.0, 2.0};
      return weighted_nll(v[0], t, w);
    }) <= 1e-4);
  }
  SECTION("sum / mean / dot") {
    ParameterStore ps;
    ps.add("x", random_tensor({2, 3}, rng));
    ps.add("y", random_tensor({2, 3}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      return add(add(sum(mul(v[0], v[0])), mean(v[1])), dot(v[0], v[1]));
    }) <= 1e-4);
  }
  SECTION("attention, causal and packed cross segments") {
    ParameterStore ps;
    ps.add("q", random_tensor({5, 4}, rng));
    ps.add("k", random_tensor({5, 4}, rng));
    ps.add("v", random_tensor({5, 4}, rng));
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      const std::vector<AttentionSegment> seg{{0, 3, 0, 3}, {3, 2, 3, 2}};
      return attention(v[0], v[1], v[2], seg, 2, true);
    }) <= 1e-4);
    CHECK(op_grad_error(ps, [](Graph&, std::vector<Var>& v) {
      // Both query groups share keys 1..3.
      const std::vector<AttentionSegment> seg{{0, 3, 1, 3}, {3, 2, 1, 3}};
      return attention(v[0], v[1], v[2], seg, 2, false);
    }) <= 1e-4);
  }
}

TEST_CASE("dropout keeps expectation and is seeded") {
  Graph g;
  Var x = g.constant(Tensor({100, 100}, 1.0));
  Rng r1(3), r2(3);
  const Tensor a = dropout(x, 0.25, r1).value();
  const Tensor b = dropout(x, 0.25, r2).value();
  CHECK(a == b);
  const double m = std::accumulate(a.values().begin(), a.values().end(), 0.0) / a.size();
  CHECK(m == Approx(1.0).margin(0.03));
}

TEST_CASE("non-finite values are rejected") {
  Graph g;
  Var x = g.constant(Tensor({1}, 1e308));
  CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}

TEST_CASE("adam step") {
  ParameterStore ps;
  ps.add("p", Tensor({1}, 1.0));
  AdamConfig cfg;
  cfg.lr = 0.1;
  AdamState st = AdamState::for_parameters(ps, cfg);
  ps.zero_grad();
  adam_step(ps, st);
  CHECK(ps.get("p").value[0] == 1.0);
  CHECK(st.step == 1);

  ps.get("p").grad[0] = 1.0;
  AdamState st2 = AdamState::for_parameters(ps, cfg);
  adam_step(ps, st2);
  // m_hat = 1, v_hat = 1, update = lr * 1 / (1 + eps).
  CHECK(ps.get("p").value[0] == Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));

  ParameterStore other;
  other.add("p", Tensor({2}, 0.0));
  CHECK_THROWS_AS(adam_step(other, st2), ContractError);
}

TEST_CASE("adam runs are bit-identical") {
  auto run = [] {
    Rng rng(4);
    ParameterStore ps;
    ps.add("w", random_tensor({3, 3}, rng));
    AdamState st = AdamState::for_parameters(ps);
    for (int i = 0; i < 5; ++i) {
      ps.zero_grad();
      Graph g;
      g.backward(sum(gelu(g.parameter(ps.get("w")))));
      adam_step(ps, st, 1e-2);
    }
    return ps.get("w").value;
  };
  CHECK(run() == run());
}

TEST_CASE("gradient clipping") {
  ParameterStore ps;
  ps.add("a", Tensor({2}, 0.0));
  ps.get("a").grad = Tensor({2}, {3.0, 4.0});
  CHECK(grad_norm(ps) == 5.0);
  CHECK(clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(grad_norm(ps) == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(12);
  ParameterStore ps;
  ps.add("enc.w", random_tensor({3, 4}, rng));
  ps.add("dec.b", random_tensor({1, 4}, rng));
  ps.add("scalar", Tensor({1}, -0.0));
  testing::TempDir dir("ckpt");
  save_checkpoint(ps, dir / "m.ckpt");
  const ParameterStore back = load_checkpoint(dir / "m.ckpt");
  REQUIRE(back.size() == ps.size());
  auto it = back.begin();
  for (const Parameter& p : ps) {
    CHECK(it->name == p.name);
    CHECK(it->value.shape() == p.value.shape());
    CHECK(std::memcmp(it->value.data(), p.value.data(), p.value.size() * sizeof(double)) == 0);
    ++it;
  }
  CHECK(back.fingerprint() == ps.fingerprint());
  const std::string bytes = serialize_checkpoint(ps);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

}  // namespace
}  // namespace capzero
