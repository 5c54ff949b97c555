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
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "capzero/tensor.hpp"

namespace capzero {

// A named trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered collection of parameters with stable handles. Handles are indices,
// so a store (and anything that refers into it by handle) copies safely.
class ParameterStore {
 public:
  using Handle = std::size_t;

  Handle add(std::string name, Tensor init);

  Parameter& at(Handle h) { return params_.at(h); }
  const Parameter& at(Handle h) const { return params_.at(h); }
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  Handle handle(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t value_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Resets every gradient to zeros of the parameter's shape.
  void zero_grad();

  // Copies values from `other`; names and shapes must match exactly.
  void assign_values(const ParameterStore& other);

  // FNV-1a over names, shapes and raw value bytes, as 16 hex digits.
  std::string fingerprint() const;

 private:
  std::deque<Parameter> params_;
  std::map<std::string, Handle, std::less<>> index_;
};

using NodeId = std::uint32_t;
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which
// is a topological order because every op consumes existing nodes only.
class Graph {
 public:
  // Invoked during backward with the node's id; reads grad(id) and adds
  // contributions into accumulate(input) for each input.
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  struct NodeRecord {
    std::string_view op;
    std::vector<NodeId> inputs;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& param);

  // Appends an op node. Throws NumericError if `value` is not finite, and
  // ContractError if any input id is not an earlier node.
  Var record(std::string_view op, std::vector<NodeId> inputs, Tensor value,
             BackwardFn backward);

  // Accumulates d(loss)/d(param) into every reachable Parameter::grad.
  // `loss` must hold exactly one value. A graph supports one backward pass.
  void backward(Var loss);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  // Empty tensor when no gradient reached the node.
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  Tensor& accumulate(NodeId id);

  std::size_t size() const { return nodes_.size(); }
  NodeRecord record_of(NodeId id) const {
    return {nodes_[id].op, nodes_[id].inputs};
  }

  // When disabled, ops skip saving backward closures (inference only).
  void set_requires_grad(bool enabled) { requires_grad_ = enabled; }
  bool requires_grad() const { return requires_grad_; }

 private:
  struct Node {
    std::string_view op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  bool requires_grad_ = true;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

}  // namespace capzero
