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

#include <cstddef>
#include <span>
#include <vector>

#include "capzero/autograd.hpp"
#include "capzero/random.hpp"

namespace capzero {

// Elementwise arithmetic. Operands must have equal rank; an extent of 1 in
// either operand broadcasts against the other. No other broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

// [n, k] x [k, m] -> [n, m].
Var matmul(Var a, Var b);

// x W + b with W: [in, out] and b: [1, out].
Var linear(Var x, Var weight, Var bias);

// Exact (erf) GELU.
Var gelu(Var x);

// Row-wise layer normalization of a [rows, d] matrix with [1, d] gain/bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Rows of `table` ([V, d]) selected by `ids`.
Var embedding(Var table, std::span<const int> ids);

// Inverted dropout: keeps each value with probability 1 - rate and scales
// survivors by 1 / (1 - rate). Identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);

Var log_softmax(Var logits);

// Mean over rows of -log_softmax(logits)[r, targets[r]].
Var cross_entropy_rows(Var logits, std::span<const int> targets);

// Sum over rows of weights[r] * -log_softmax(logits)[r, targets[r]].
Var weighted_nll(Var logits, std::span<const int> targets,
                 std::span<const double> weights);

Var sum(Var x);
Var mean(Var x);
Var dot(Var a, Var b);

// One attention problem inside a packed batch: query rows
// [q_begin, q_begin + q_len) attend to key/value rows
// [k_begin, k_begin + k_len). Several segments may share key rows.
struct AttentionSegment {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t k_begin = 0;
  std::size_t k_len = 0;
};

// Multi-head scaled dot-product attention over packed rows. q: [Nq, d],
// k and v: [Nk, d], d divisible by `heads`. With `causal`, query i of a
// segment sees keys 0..i of that segment only (requires q_len == k_len).
Var attention(Var q, Var k, Var v, std::span<const AttentionSegment> segments,
              std::size_t heads, bool causal);

}  // namespace capzero
