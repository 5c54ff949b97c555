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
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "capzero/adam.hpp"
#include "capzero/dataset.hpp"
#include "capzero/model.hpp"

namespace capzero {

enum class LrDecay { kCosine, kLinear, kConstant };

std::string to_string(LrDecay decay);
LrDecay parse_lr_decay(const std::string& text);

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  double warmup_fraction = 0.05;
  double peak_lr = 3e-4;
  LrDecay decay = LrDecay::kCosine;
  double beta = 1.5;   // multimodal loss weight
  double gamma = 0.5;  // unimodal loss weight
  // Global gradient norm cap; 0 disables clipping.
  double grad_clip = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  // Checkpoint cadence in steps; 0 writes only the final checkpoint.
  std::size_t eval_every = 0;

  void validate() const;
  std::size_t warmup_steps() const;
  // Learning rate used for the update of 0-based step `step`.
  double lr_at(std::size_t step) const;
};

struct TrainLogRecord {
  std::size_t step = 0;  // 1-based
  double l_multi = 0.0;
  double l_uni = 0.0;
  double combined = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall time since training started
};

using Batch = std::span<const MultimodalExample* const>;

// Mean over the batch of each example's token-averaged caption NLL given
// its image.
Var multimodal_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                    Batch batch, ForwardOptions opts = {});
// Same, with every caption conditioned on the null embedding.
Var unimodal_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                  Batch batch, ForwardOptions opts = {});

struct CombinedLoss {
  Var total;
  Var multi;
  Var uni;
};

// beta * multimodal + gamma * unimodal on one graph.
CombinedLoss combined_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                           Batch batch, double beta, double gamma,
                           ForwardOptions opts = {});

// Value-only conveniences.
double multimodal_loss_value(const CaptionerModel& model, Batch batch);
double unimodal_loss_value(const CaptionerModel& model, Batch batch);

struct TrainHooks {
  std::function<void(const TrainLogRecord&)> on_step;
  // Called every eval_every steps (when nonzero) with the 1-based step.
  std::function<void(std::size_t, const CaptionerModel&)> on_checkpoint;
};

// Seeded epoch sampler: walks fixed-size batches through successive
// shuffled permutations of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t n_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Runs config.steps updates in place and returns one record per step.
// Throws NumericError naming the step and batch ids on a non-finite loss.
std::vector<TrainLogRecord> train(CaptionerModel& model, const Dataset& data,
                                  const TrainConfig& config,
                                  const TrainHooks& hooks = {});

void write_train_log(const std::vector<TrainLogRecord>& log,
                     const std::filesystem::path& path);

}  // namespace capzero
