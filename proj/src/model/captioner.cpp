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

#include "capzero/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "capzero/errors.hpp"
#include "capzero/ops.hpp"
#include "capzero/vocab.hpp"

namespace capzero {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("model config: " + msg); };
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    fail("image_size must be a positive multiple of patch_size");
  }
  if (channels == 0) fail("channels must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model must be divisible by n_heads");
  }
  if (vocab_size < 4) fail("vocab_size must cover the special tokens plus words");
  if (max_len < 2) fail("max_len must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

std::string ModelConfig::to_manifest() const {
  std::ostringstream out;
  out.precision(17);
  out << "image_size = " << image_size << '\n'
      << "channels = " << channels << '\n'
      << "patch_size = " << patch_size << '\n'
      << "d_model = " << d_model << '\n'
      << "n_heads = " << n_heads << '\n'
      << "encoder_layers = " << encoder_layers << '\n'
      << "decoder_layers = " << decoder_layers << '\n'
      << "vocab_size = " << vocab_size << '\n'
      << "max_len = " << max_len << '\n'
      << "dropout = " << dropout << '\n'
      << "init_std = " << init_std << '\n'
      << "seed = " << seed << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  ModelConfig c;
  auto get_size = [&](const char* key, std::size_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("model manifest missing ") + key);
    try {
      dst = std::stoull(it->second);
    } catch (const std::exception&) {
      throw ParseError(std::string("model manifest: bad ") + key);
    }
  };
  auto get_double = [&](const char* key, double& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("model manifest missing ") + key);
    try {
      dst = std::stod(it->second);
    } catch (const std::exception&) {
      throw ParseError(std::string("model manifest: bad ") + key);
    }
  };
  get_size("image_size", c.image_size);
  get_size("channels", c.channels);
  get_size("patch_size", c.patch_size);
  get_size("d_model", c.d_model);
  get_size("n_heads", c.n_heads);
  get_size("encoder_layers", c.encoder_layers);
  get_size("decoder_layers", c.decoder_layers);
  get_size("vocab_size", c.vocab_size);
  get_size("max_len", c.max_len);
  get_double("dropout", c.dropout);
  get_double("init_std", c.init_std);
  std::size_t seed = 0;
  get_size("seed", seed);
  c.seed = seed;
  c.validate();
  return c;
}

Tensor patchify(const Image& image, std::size_t patch_size) {
  const std::size_t ph = image.height / patch_size;
  const std::size_t pw = image.width / patch_size;
  const std::size_t dim = patch_size * patch_size * image.channels;
  Tensor out({ph * pw, dim});
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      double* row = out.data() + (py * pw + px) * dim;
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch_size; ++y) {
        for (std::size_t x = 0; x < patch_size; ++x) {
          for (std::size_t c = 0; c < image.channels; ++c) {
            row[k++] = image.at(py * patch_size + y, px * patch_size + x, c);
          }
        }
      }
    }
  }
  return out;
}

CaptionerModel::Binder::Binder(Graph& graph, ParameterStore& params)
    : graph_(&graph), mutable_(&params), params_(&params), bound_(params.size()) {}

CaptionerModel::Binder::Binder(Graph& graph, const ParameterStore& params)
    : graph_(&graph), params_(&params), bound_(params.size()) {}

Var CaptionerModel::Binder::operator()(ParameterStore::Handle h) {
  Var& v = bound_.at(h);
  if (!v.valid()) {
    v = mutable_ != nullptr ? graph_->parameter(mutable_->at(h))
                            : graph_->constant(params_->at(h).value);
  }
  return v;
}

CaptionerModel::CaptionerModel(ModelConfig config) : config_(config) {
  config_.validate();
  Rng init(Rng::derive(config_.seed, 0xC0FFEE));
  build_layout(&init);
}

CaptionerModel::CaptionerModel(ModelConfig config, ParameterStore params)
    : CaptionerModel(config) {
  params_.assign_values(params);
}

ParameterStore::Handle CaptionerModel::declare(const std::string& name, Shape shape,
                                               Rng* init, double std, double fill) {
  Tensor t(std::move(shape), fill);
  if (std > 0.0) {
    for (double& v : t.values()) v = init->normal(0.0, std);
  }
  return params_.add(name, std::move(t));
}

CaptionerModel::NormParams CaptionerModel::declare_norm(const std::string& prefix,
                                                        Rng* init) {
  const std::size_t d = config_.d_model;
  return {declare(prefix + ".gain", {1, d}, init, 0.0, 1.0),
          declare(prefix + ".bias", {1, d}, init, 0.0, 0.0)};
}

CaptionerModel::AttentionParams CaptionerModel::declare_attention(
    const std::string& prefix, Rng* init) {
  const std::size_t d = config_.d_model;
  const double s = config_.init_std;
  AttentionParams p;
  p.wq = declare(prefix + ".wq", {d, d}, init, s);
  p.bq = declare(prefix + ".bq", {1, d}, init, 0.0);
  p.wk = declare(prefix + ".wk", {d, d}, init, s);
  p.bk = declare(prefix + ".bk", {1, d}, init, 0.0);
  p.wv = declare(prefix + ".wv", {d, d}, init, s);
  p.bv = declare(prefix + ".bv", {1, d}, init, 0.0);
  p.wo = declare(prefix + ".wo", {d, d}, init, s);
  p.bo = declare(prefix + ".bo", {1, d}, init, 0.0);
  return p;
}

CaptionerModel::FeedForwardParams CaptionerModel::declare_ffn(const std::string& prefix,
                                                              Rng* init) {
  const std::size_t d = config_.d_model;
  const double s = config_.init_std;
  return {declare(prefix + ".w1", {d, 4 * d}, init, s),
          declare(prefix + ".b1", {1, 4 * d}, init, 0.0),
          declare(prefix + ".w2", {4 * d, d}, init, s),
          declare(prefix + ".b2", {1, d}, init, 0.0)};
}

void CaptionerModel::build_layout(Rng* init) {
  const std::size_t d = config_.d_model;
  const double s = config_.init_std;
  patch_w_ = declare("enc.patch.w", {config_.patch_dim(), d}, init, s);
  patch_b_ = declare("enc.patch.b", {1, d}, init, 0.0);
  patch_pos_ = declare("enc.pos", {config_.num_patches(), d}, init, s);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string prefix = "enc.layer" + std::to_string(l);
    EncoderBlock b;
    b.ln1 = declare_norm(prefix + ".ln1", init);
    b.attn = declare_attention(prefix + ".attn", init);
    b.ln2 = declare_norm(prefix + ".ln2", init);
    b.ffn = declare_ffn(prefix + ".ffn", init);
    encoder_.push_back(b);
  }
  enc_final_ = declare_norm("enc.ln_final", init);

  tok_emb_ = declare("dec.tok", {config_.vocab_size, d}, init, s);
  pos_emb_ = declare("dec.pos", {config_.max_len, d}, init, s);
  // Unit scale, matching the layer-normalized encoder outputs it stands in for.
  null_emb_ = declare(kNullEmbedding, {1, d}, init, 1.0);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string prefix = "dec.layer" + std::to_string(l);
    DecoderBlock b;
    b.ln1 = declare_norm(prefix + ".ln1", init);
    b.self_attn = declare_attention(prefix + ".self", init);
    b.ln2 = declare_norm(prefix + ".ln2", init);
    b.cross_attn = declare_attention(prefix + ".cross", init);
    b.ln3 = declare_norm(prefix + ".ln3", init);
    b.ffn = declare_ffn(prefix + ".ffn", init);
    decoder_.push_back(b);
  }
  dec_final_ = declare_norm("dec.ln_final", init);
  out_w_ = declare("dec.out.w", {d, config_.vocab_size}, init, s);
  out_b_ = declare("dec.out.b", {1, config_.vocab_size}, init, 0.0);
}

std::vector<std::string> CaptionerModel::encoder_parameter_names() const {
  std::vector<std::string> names;
  for (const Parameter& p : params_) {
    if (p.name.rfind("enc.", 0) == 0) names.push_back(p.name);
  }
  return names;
}

Var CaptionerModel::maybe_dropout(Var x, ForwardOptions opts) const {
  if (!opts.train || config_.dropout == 0.0) return x;
  if (opts.rng == nullptr) throw ContractError("dropout in training needs an rng");
  return dropout(x, config_.dropout, *opts.rng);
}

Var CaptionerModel::norm(Binder& bind, const NormParams& p, Var x) const {
  return layer_norm(x, bind(p.gain), bind(p.bias));
}

Var CaptionerModel::attention_block(Binder& bind, const AttentionParams& p,
                                    Var queries, Var keys,
                                    std::span<const AttentionSegment> segments,
                                    bool causal, ForwardOptions opts) const {
  Var q = linear(queries, bind(p.wq), bind(p.bq));
  Var k = linear(keys, bind(p.wk), bind(p.bk));
  Var v = linear(keys, bind(p.wv), bind(p.bv));
  Var mixed = attention(q, k, v, segments, config_.n_heads, causal);
  return maybe_dropout(linear(mixed, bind(p.wo), bind(p.bo)), opts);
}

Var CaptionerModel::feed_forward(Binder& bind, const FeedForwardParams& p, Var x,
                                 ForwardOptions opts) const {
  Var hidden = gelu(linear(x, bind(p.w1), bind(p.b1)));
  return maybe_dropout(linear(hidden, bind(p.w2), bind(p.b2)), opts);
}

Var CaptionerModel::encode_images(Binder& bind, std::span<const Image* const> images,
                                  ForwardOptions opts) const {
  if (images.empty()) throw ContractError("encode_images: empty batch");
  const std::size_t np = config_.num_patches();
  const std::size_t pd = config_.patch_dim();
  Tensor patches({images.size() * np, pd});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.height != config_.image_size || img.width != config_.image_size ||
        img.channels != config_.channels ||
        img.pixels.size() != img.height * img.width * img.channels) {
      throw ContractError("encode_image: image extents [" + std::to_string(img.height) +
                          ", " + std::to_string(img.width) + ", " +
                          std::to_string(img.channels) + "] do not match the model");
    }
    const Tensor p = patchify(img, config_.patch_size);
    std::copy(p.data(), p.data() + p.size(), patches.data() + b * np * pd);
  }
  Graph& g = bind.graph();
  std::vector<int> positions(images.size() * np);
  std::vector<AttentionSegment> segments;
  for (std::size_t b = 0; b < images.size(); ++b) {
    for (std::size_t i = 0; i < np; ++i) positions[b * np + i] = static_cast<int>(i);
    segments.push_back({b * np, np, b * np, np});
  }
  Var x = add(linear(g.constant(std::move(patches)), bind(patch_w_), bind(patch_b_)),
              embedding(bind(patch_pos_), positions));
  for (const EncoderBlock& block : encoder_) {
    Var h = norm(bind, block.ln1, x);
    x = add(x, attention_block(bind, block.attn, h, h, segments, false, opts));
    x = add(x, feed_forward(bind, block.ffn, norm(bind, block.ln2, x), opts));
  }
  return norm(bind, enc_final_, x);
}

Memory CaptionerModel::image_memory(Binder& bind, std::span<const Image* const> images,
                                    ForwardOptions opts) const {
  Memory m;
  m.states = encode_images(bind, images, opts);
  const std::size_t np = config_.num_patches();
  for (std::size_t b = 0; b < images.size(); ++b) m.spans.emplace_back(b * np, np);
  return m;
}

Memory CaptionerModel::null_memory(Binder& bind, std::size_t count) const {
  Memory m;
  m.states = bind(null_emb_);
  m.spans.assign(count, {0, 1});
  return m;
}

Memory CaptionerModel::shared_memory(Binder& bind, const Tensor& states,
                                     std::size_t count) const {
  if (states.rank() != 2 || states.cols() != config_.d_model) {
    throw ContractError("memory must be [rows, d_model]");
  }
  Memory m;
  m.states = bind.graph().constant(states);
  m.spans.assign(count, {0, states.rows()});
  return m;
}

Var CaptionerModel::decode(Binder& bind, std::span<const std::vector<int>> inputs,
                           const Memory& memory, ForwardOptions opts) const {
  if (inputs.empty()) throw ContractError("decode: empty batch");
  if (memory.spans.size() != inputs.size()) {
    throw ContractError("decode: memory spans do not match the batch");
  }
  std::vector<int> ids, positions;
  std::vector<AttentionSegment> self_segments, cross_segments;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& seq = inputs[i];
    if (seq.empty() || seq.front() != Vocab::kBos) {
      throw ContractError("decode: sequences must begin with BOS");
    }
    if (seq.size() > config_.max_len) {
      throw ContractError("decode: sequence of length " + std::to_string(seq.size()) +
                          " exceeds max_len " + std::to_string(config_.max_len));
    }
    const std::size_t begin = ids.size();
    for (std::size_t n = 0; n < seq.size(); ++n) {
      if (seq[n] < 0 || static_cast<std::size_t>(seq[n]) >= config_.vocab_size) {
        throw IndexError("decode: token id " + std::to_string(seq[n]) +
                         " outside vocab of " + std::to_string(config_.vocab_size));
      }
      ids.push_back(seq[n]);
      positions.push_back(static_cast<int>(n));
    }
    self_segments.push_back({begin, seq.size(), begin, seq.size()});
    cross_segments.push_back(
        {begin, seq.size(), memory.spans[i].first, memory.spans[i].second});
  }
  Var x = add(embedding(bind(tok_emb_), ids), embedding(bind(pos_emb_), positions));
  for (const DecoderBlock& block : decoder_) {
    Var h = norm(bind, block.ln1, x);
    x = add(x, attention_block(bind, block.self_attn, h, h, self_segments, true, opts));
    x = add(x, attention_block(bind, block.cross_attn, norm(bind, block.ln2, x),
                               memory.states, cross_segments, false, opts));
    x = add(x, feed_forward(bind, block.ffn, norm(bind, block.ln3, x), opts));
  }
  return linear(norm(bind, dec_final_, x), bind(out_w_), bind(out_b_));
}

Tensor CaptionerModel::encode_image(const Image& image) const {
  Graph g;
  g.set_requires_grad(false);
  Binder bind(g, params_);
  const Image* batch[] = {&image};
  return encode_images(bind, batch).value();
}

Tensor CaptionerModel::decode_logits(std::span<const int> tokens,
                                     const Tensor* memory) const {
  Graph g;
  g.set_requires_grad(false);
  Binder bind(g, params_);
  const std::vector<std::vector<int>> batch = {{tokens.begin(), tokens.end()}};
  const Memory m = memory != nullptr ? shared_memory(bind, *memory, 1)
                                     : null_memory(bind, 1);
  return decode(bind, batch, m).value();
}

double CaptionerModel::sequence_logprob(std::span<const int> tokens,
                                        const Tensor* memory,
                                        bool length_normalize) const {
  const std::vector<std::vector<int>> batch = {{tokens.begin(), tokens.end()}};
  return sequence_logprobs(batch, memory, length_normalize).front();
}

std::vector<double> CaptionerModel::sequence_logprobs(
    std::span<const std::vector<int>> sequences, const Tensor* memory,
    bool length_normalize) const {
  if (sequences.empty()) return {};
  std::vector<std::vector<int>> inputs;
  inputs.reserve(sequences.size());
  for (const auto& seq : sequences) {
    if (seq.size() < 2) {
      throw ContractError("sequence_logprob: need at least BOS and one more token");
    }
    inputs.emplace_back(seq.begin(), seq.end() - 1);
  }
  Graph g;
  g.set_requires_grad(false);
  Binder bind(g, params_);
  const Memory m = memory != nullptr ? shared_memory(bind, *memory, inputs.size())
                                     : null_memory(bind, inputs.size());
  const Tensor logp = log_softmax(decode(bind, inputs, m)).value();
  std::vector<double> out;
  out.reserve(sequences.size());
  std::size_t row = 0;
  for (const auto& seq : sequences) {
    double total = 0.0;
    for (std::size_t n = 1; n < seq.size(); ++n, ++row) {
      total += logp.at(row, static_cast<std::size_t>(seq[n]));
    }
    if (length_normalize) total /= static_cast<double>(seq.size() - 1);
    out.push_back(total);
  }
  return out;
}

}  // namespace capzero
