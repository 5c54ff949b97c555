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
#include <vector>

#include "capzero/autograd.hpp"

namespace capzero {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers, one pair per parameter of the store the
// state was created for.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState for_parameters(const ParameterStore& params,
                                  AdamConfig config = {});
};

// One bias-corrected Adam update of every parameter from its grad.
// `lr` overrides config.lr for this step (learning-rate schedules).
void adam_step(ParameterStore& params, AdamState& state, double lr);
inline void adam_step(ParameterStore& params, AdamState& state) {
  adam_step(params, state, state.config.lr);
}

// L2 norm over all parameter gradients.
double grad_norm(const ParameterStore& params);

// Rescales gradients so their global norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

}  // namespace capzero
