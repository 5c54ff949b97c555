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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capzero/autograd.hpp"
#include "capzero/dataset.hpp"
#include "capzero/ops.hpp"
#include "capzero/random.hpp"

namespace capzero {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t vocab_size = 0;
  std::size_t max_len = 16;
  double dropout = 0.0;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  std::size_t num_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const;

  // "key = value" lines, one per field, in declaration order.
  std::string to_manifest() const;
  static ModelConfig from_manifest(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

// Per-call switches for a forward pass. Dropout is applied only when
// `train` is set and the configured rate is positive.
struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;
};

// Cross-attention source for a batch of decoded sequences: `states` rows
// [begin, begin + len) of spans[i] are the memory of sequence i.
struct Memory {
  Var states;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
};

// Patch-embedding transformer encoder plus an autoregressive transformer
// decoder that runs in two modes. Multimodal: cross-attention reads the
// encoded image. Unimodal: cross-attention reads a single learned null
// embedding, so the same weights also model the caption prior P(T).
class CaptionerModel {
 public:
  explicit CaptionerModel(ModelConfig config);
  // Adopts checkpointed parameters; names and shapes must match `config`.
  CaptionerModel(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  // Binds parameters into a graph: as differentiable leaves for a mutable
  // model, as constants otherwise.
  class Binder {
   public:
    Binder(Graph& graph, ParameterStore& params);
    Binder(Graph& graph, const ParameterStore& params);
    Var operator()(ParameterStore::Handle h);
    Graph& graph() const { return *graph_; }

   private:
    Graph* graph_;
    ParameterStore* mutable_ = nullptr;
    const ParameterStore* params_;
    std::vector<Var> bound_;
  };

  // Encodes a batch into [B * num_patches, d_model] rows.
  Var encode_images(Binder& bind, std::span<const Image* const> images,
                    ForwardOptions opts = {}) const;
  Memory image_memory(Binder& bind, std::span<const Image* const> images,
                      ForwardOptions opts = {}) const;
  // Memory that points every one of `count` sequences at the null embedding.
  Memory null_memory(Binder& bind, std::size_t count) const;
  // Points `count` sequences at the same precomputed encoder output.
  Memory shared_memory(Binder& bind, const Tensor& states, std::size_t count) const;

  // Logits [sum of lengths, V] for packed sequences; row n of a sequence
  // predicts its token n + 1.
  Var decode(Binder& bind, std::span<const std::vector<int>> inputs,
             const Memory& memory, ForwardOptions opts = {}) const;

  // Single-example conveniences for inference.
  Tensor encode_image(const Image& image) const;
  // `memory` null selects unimodal mode.
  Tensor decode_logits(std::span<const int> tokens, const Tensor* memory) const;
  // Sum over n >= 1 of log P(token n | tokens < n [, image]). With
  // `length_normalize`, divided by the number of predicted tokens.
  double sequence_logprob(std::span<const int> tokens, const Tensor* memory,
                          bool length_normalize = false) const;
  // Scores many full sequences against one memory (or null) in one pass.
  std::vector<double> sequence_logprobs(std::span<const std::vector<int>> sequences,
                                        const Tensor* memory,
                                        bool length_normalize = false) const;

  // Names of parameters owned by the image encoder (patch embedding,
  // encoder blocks and final encoder norm).
  std::vector<std::string> encoder_parameter_names() const;
  static constexpr const char* kNullEmbedding = "dec.null";

 private:
  struct AttentionParams {
    ParameterStore::Handle wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct NormParams {
    ParameterStore::Handle gain, bias;
  };
  struct FeedForwardParams {
    ParameterStore::Handle w1, b1, w2, b2;
  };
  struct EncoderBlock {
    NormParams ln1, ln2;
    AttentionParams attn;
    FeedForwardParams ffn;
  };
  struct DecoderBlock {
    NormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    FeedForwardParams ffn;
  };

  void build_layout(Rng* init);
  ParameterStore::Handle declare(const std::string& name, Shape shape, Rng* init,
                                 double std, double fill = 0.0);
  NormParams declare_norm(const std::string& prefix, Rng* init);
  AttentionParams declare_attention(const std::string& prefix, Rng* init);
  FeedForwardParams declare_ffn(const std::string& prefix, Rng* init);

  Var attention_block(Binder& bind, const AttentionParams& p, Var queries,
                      Var keys, std::span<const AttentionSegment> segments,
                      bool causal, ForwardOptions opts) const;
  Var feed_forward(Binder& bind, const FeedForwardParams& p, Var x,
                   ForwardOptions opts) const;
  Var norm(Binder& bind, const NormParams& p, Var x) const;
  Var maybe_dropout(Var x, ForwardOptions opts) const;

  ModelConfig config_;
  ParameterStore params_;

  ParameterStore::Handle patch_w_, patch_b_, patch_pos_;
  std::vector<EncoderBlock> encoder_;
  NormParams enc_final_;
  ParameterStore::Handle tok_emb_, pos_emb_, null_emb_;
  std::vector<DecoderBlock> decoder_;
  NormParams dec_final_;
  ParameterStore::Handle out_w_, out_b_;
};

// Flattens an image into [num_patches, patch_dim] rows (patch-major, then
// pixel rows, columns, channels).
Tensor patchify(const Image& image, std::size_t patch_size);

}  // namespace capzero
