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

#include "capzero/autograd.hpp"

#include <cstdio>
#include <cstring>

#include "capzero/errors.hpp"

namespace capzero {

ParameterStore::Handle ParameterStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) {
    throw ContractError("duplicate parameter name: " + name);
  }
  const Handle h = params_.size();
  index_.emplace(name, h);
  Tensor grad = Tensor::zeros_like(init);
  params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad)});
  return h;
}

Parameter& ParameterStore::get(std::string_view name) {
  return params_.at(handle(name));
}

const Parameter& ParameterStore::get(std::string_view name) const {
  return params_.at(handle(name));
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

ParameterStore::Handle ParameterStore::handle(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter: " + std::string(name));
  }
  return it->second;
}

std::size_t ParameterStore::value_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor::zeros_like(p.value);
    } else {
      p.grad.fill(0.0);
    }
  }
}

void ParameterStore::assign_values(const ParameterStore& other) {
  if (other.size() != size()) {
    throw ContractError("parameter count mismatch: " +
                        std::to_string(other.size()) + " vs " +
                        std::to_string(size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& src = other.params_[i];
    Parameter& dst = params_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      throw ContractError("parameter mismatch at " + dst.name + " " +
                          shape_string(dst.value.shape()) + " vs " + src.name +
                          " " + shape_string(src.value.shape()));
    }
    dst.value = src.value;
  }
}

std::string ParameterStore::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= p[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    for (std::size_t extent : p.value.shape()) {
      const std::uint64_t e = extent;
      mix(&e, sizeof e);
    }
    mix(p.value.data(), p.value.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

Var Graph::constant(Tensor value) {
  return record("constant", {}, std::move(value), nullptr);
}

Var Graph::parameter(Parameter& param) {
  Var v = record("parameter", {}, param.value, nullptr);
  nodes_[v.id_].param = &param;
  return v;
}

Var Graph::record(std::string_view op, std::vector<NodeId> inputs,
                  Tensor value, BackwardFn backward) {
  if (consumed_) {
    throw ContractError("graph already ran backward; build a new one");
  }
  const auto id = static_cast<NodeId>(nodes_.size());
  for (NodeId in : inputs) {
    if (in >= id) throw ContractError("op input refers to a later node");
  }
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + std::string(op) +
                       "' of shape " + shape_string(value.shape()));
  }
  Node node;
  node.op = op;
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (requires_grad_) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

Tensor& Graph::accumulate(NodeId id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor::zeros_like(node.value);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph_ != this) throw ContractError("loss belongs to another graph");
  if (!requires_grad_) {
    throw ContractError("backward on a graph built without gradients");
  }
  if (consumed_) throw ContractError("backward already ran on this graph");
  if (nodes_[loss.id_].value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(nodes_[loss.id_].value.shape()));
  }
  consumed_ = true;
  accumulate(loss.id_).fill(1.0);
  for (NodeId id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty()) continue;
    if (node.param != nullptr) {
      Tensor& dst = node.param->grad;
      if (dst.shape() != node.value.shape()) {
        dst = Tensor::zeros_like(node.value);
      }
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    } else if (node.backward) {
      node.backward(*this, id);
    }
  }
}

}  // namespace capzero
