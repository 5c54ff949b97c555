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

#include "capzero/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "capzero/errors.hpp"
#include "capzero/ops.hpp"

namespace capzero {

std::string to_string(LrDecay decay) {
  switch (decay) {
    case LrDecay::kCosine: return "cosine";
    case LrDecay::kLinear: return "linear";
    case LrDecay::kConstant: return "constant";
  }
  return "cosine";
}

LrDecay parse_lr_decay(const std::string& text) {
  if (text == "cosine") return LrDecay::kCosine;
  if (text == "linear") return LrDecay::kLinear;
  if (text == "constant") return LrDecay::kConstant;
  throw ConfigError("unknown lr decay '" + text + "' (cosine, linear, constant)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("train config: " + msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(beta >= 0.0) || !(gamma >= 0.0)) fail("loss weights must be nonnegative");
  if (!(beta + gamma > 0.0)) fail("beta + gamma must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    fail("warmup_fraction must be in [0, 1]");
  }
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) fail("peak_lr must be positive");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
}

std::size_t TrainConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(steps)));
}

double TrainConfig::lr_at(std::size_t step) const {
  const std::size_t warm = warmup_steps();
  if (step < warm) {
    return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  }
  const std::size_t span = steps > warm ? steps - warm : 1;
  const double progress =
      std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
  switch (decay) {
    case LrDecay::kCosine:
      return 0.5 * peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
    case LrDecay::kLinear:
      return peak_lr * (1.0 - progress);
    case LrDecay::kConstant:
      return peak_lr;
  }
  return peak_lr;
}

namespace {

void check_batch(Batch batch) {
  if (batch.empty()) throw ContractError("loss: empty batch");
  for (const MultimodalExample* ex : batch) {
    if (ex->tokens.size() < 2) {
      throw ContractError("loss: example caption '" + ex->caption + "' is not encoded");
    }
  }
}

// Teacher-forced NLL, each example weighted by 1 / (B * N_i).
Var caption_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                 Batch batch, const Memory& memory, ForwardOptions opts) {
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  std::vector<double> weights;
  const double b = static_cast<double>(batch.size());
  for (const MultimodalExample* ex : batch) {
    const auto& t = ex->tokens;
    inputs.emplace_back(t.begin(), t.end() - 1);
    const double w = 1.0 / (b * static_cast<double>(t.size() - 1));
    for (std::size_t n = 1; n < t.size(); ++n) {
      targets.push_back(t[n]);
      weights.push_back(w);
    }
  }
  return weighted_nll(model.decode(bind, inputs, memory, opts), targets, weights);
}

}  // namespace

Var multimodal_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                    Batch batch, ForwardOptions opts) {
  check_batch(batch);
  std::vector<const Image*> images;
  images.reserve(batch.size());
  for (const MultimodalExample* ex : batch) images.push_back(&ex->image);
  const Memory memory = model.image_memory(bind, images, opts);
  return caption_loss(model, bind, batch, memory, opts);
}

Var unimodal_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                  Batch batch, ForwardOptions opts) {
  check_batch(batch);
  const Memory memory = model.null_memory(bind, batch.size());
  return caption_loss(model, bind, batch, memory, opts);
}

CombinedLoss combined_loss(const CaptionerModel& model, CaptionerModel::Binder& bind,
                           Batch batch, double beta, double gamma,
                           ForwardOptions opts) {
  if (!(beta >= 0.0) || !(gamma >= 0.0)) {
    throw ContractError("combined_loss: weights must be nonnegative");
  }
  if (beta == 0.0 && gamma == 0.0) {
    throw ContractError("combined_loss: beta and gamma are both zero");
  }
  CombinedLoss out;
  out.multi = multimodal_loss(model, bind, batch, opts);
  out.uni = unimodal_loss(model, bind, batch, opts);
  out.total = add(scale(out.multi, beta), scale(out.uni, gamma));
  return out;
}

double multimodal_loss_value(const CaptionerModel& model, Batch batch) {
  Graph g;
  g.set_requires_grad(false);
  CaptionerModel::Binder bind(g, std::as_const(model.parameters()));
  return multimodal_loss(model, bind, batch).value().item();
}

double unimodal_loss_value(const CaptionerModel& model, Batch batch) {
  Graph g;
  g.set_requires_grad(false);
  CaptionerModel::Binder bind(g, std::as_const(model.parameters()));
  return unimodal_loss(model, bind, batch).value().item();
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed), order_(n) {
  if (n == 0) throw ContractError("batch sampler: empty dataset");
  if (batch_size == 0) throw ContractError("batch sampler: batch size must be >= 1");
  cursor_ = n_;  // forces a shuffle on first use
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  while (out.size() < batch_size_) {
    if (cursor_ == n_) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

std::vector<TrainLogRecord> train(CaptionerModel& model, const Dataset& data,
                                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (data.empty()) throw ContractError("train: dataset is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].tokens.size() < 2) {
      throw ContractError("train: example " + std::to_string(i) + " is not encoded");
    }
  }
  ParameterStore& params = model.parameters();
  AdamConfig adam;
  adam.lr = config.peak_lr;
  AdamState state = AdamState::for_parameters(params, adam);
  BatchSampler sampler(data.size(), config.batch_size, Rng::derive(config.seed, 1));
  Rng dropout_rng(Rng::derive(config.seed, 2));

  std::vector<TrainLogRecord> log;
  log.reserve(config.steps);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::vector<std::size_t> ids = sampler.next();
    std::vector<const MultimodalExample*> batch;
    batch.reserve(ids.size());
    for (std::size_t id : ids) batch.push_back(&data[id]);

    params.zero_grad();
    TrainLogRecord rec;
    rec.step = step + 1;
    try {
      Graph g;
      CaptionerModel::Binder bind(g, params);
      ForwardOptions opts{true, &dropout_rng};
      CombinedLoss loss = combined_loss(model, bind, batch, config.beta, config.gamma, opts);
      rec.l_multi = loss.multi.value().item();
      rec.l_uni = loss.uni.value().item();
      rec.combined = loss.total.value().item();
      g.backward(loss.total);
      rec.grad_norm = config.grad_clip > 0.0 ? clip_grad_norm(params, config.grad_clip)
                                              : grad_norm(params);
      if (!std::isfinite(rec.grad_norm)) throw NumericError("non-finite gradient norm");
    } catch (const NumericError& e) {
      std::ostringstream msg;
      msg << "training diverged at step " << rec.step << " (batch ids";
      for (std::size_t id : ids) msg << ' ' << id;
      msg << "): " << e.what();
      throw NumericError(msg.str());
    }
    rec.lr = config.lr_at(step);
    if (config.weight_decay > 0.0) {
      for (Parameter& p : params) {
        auto v = p.value.values();
        for (double& x : v) x -= rec.lr * config.weight_decay * x;
      }
    }
    adam_step(params, state, rec.lr);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_checkpoint && config.eval_every > 0 && rec.step % config.eval_every == 0 &&
        rec.step != config.steps) {
      hooks.on_checkpoint(rec.step, model);
    }
  }
  return log;
}

void write_train_log(const std::vector<TrainLogRecord>& log,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write train log: " + path.string());
  out << "step,l_multi,l_uni,L,grad_norm,seconds\n";
  char buf[256];
  for (const TrainLogRecord& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.step,
                  r.l_multi, r.l_uni, r.combined, r.grad_norm, r.seconds);
    out << buf;
  }
  if (!out) throw IoError("failed writing train log: " + path.string());
}

}  // namespace capzero
