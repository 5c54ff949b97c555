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

#include "capzero/adam.hpp"

#include <cmath>

#include "capzero/errors.hpp"

namespace capzero {

AdamState AdamState::for_parameters(const ParameterStore& params,
                                    AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const Parameter& p : params) {
    state.m.push_back(Tensor::zeros_like(p.value));
    state.v.push_back(Tensor::zeros_like(p.value));
  }
  return state;
}

void adam_step(ParameterStore& params, AdamState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam: state tracks " + std::to_string(state.m.size()) +
                        " parameters, store has " +
                        std::to_string(params.size()));
  }
  std::size_t i = 0;
  for (const Parameter& p : params) {
    if (state.m[i].shape() != p.value.shape() ||
        state.v[i].shape() != p.value.shape() ||
        p.grad.shape() != p.value.shape()) {
      throw ContractError("adam: shape mismatch for parameter " + p.name);
    }
    ++i;
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  i = 0;
  for (Parameter& p : params) {
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p.value[j] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
    ++i;
  }
}

double grad_norm(const ParameterStore& params) {
  double total = 0.0;
  for (const Parameter& p : params) {
    for (double g : p.grad.values()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter& p : params) {
      for (double& g : p.grad.values()) g *= factor;
    }
  }
  return norm;
}

}  // namespace capzero
