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

#include "capzero/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "capzero/binary_io.hpp"
#include "capzero/errors.hpp"

namespace capzero {

void CandidateSet::validate() const {
  if (captions.empty()) throw ContractError("candidate set is empty");
  if (labels.size() != captions.size() || prompt_index.size() != captions.size()) {
    throw ContractError("candidate set: labels/prompt_index do not match captions");
  }
  if (!texts.empty() && texts.size() != captions.size()) {
    throw ContractError("candidate set: texts do not match captions");
  }
  std::set<std::pair<int, int>> seen;
  for (std::size_t j = 0; j < captions.size(); ++j) {
    if (captions[j].size() < 2) {
      throw ContractError("candidate " + std::to_string(j) + " has no tokens to score");
    }
    if (!seen.emplace(labels[j], prompt_index[j]).second) {
      throw ContractError("duplicate candidate (class " + std::to_string(labels[j]) +
                          ", prompt " + std::to_string(prompt_index[j]) + ")");
    }
  }
}

CandidateSet CandidateSet::from_prompts(const std::vector<PromptEntry>& prompts,
                                        const Vocab& vocab) {
  CandidateSet c;
  for (const PromptEntry& p : prompts) {
    c.captions.push_back(vocab.encode(p.text));
    c.labels.push_back(p.class_id);
    c.prompt_index.push_back(p.prompt_index);
    c.texts.push_back(p.text);
  }
  c.validate();
  return c;
}

std::string to_string(PriorSource source) {
  switch (source) {
    case PriorSource::kUnimodalMode: return "unimodal_mode";
    case PriorSource::kZeroImage: return "zero_image";
    case PriorSource::kExternalLm: return "external_lm";
  }
  return "unimodal_mode";
}

PriorSource parse_prior_source(const std::string& text) {
  if (text == "unimodal_mode") return PriorSource::kUnimodalMode;
  if (text == "zero_image") return PriorSource::kZeroImage;
  if (text == "external_lm") return PriorSource::kExternalLm;
  throw ConfigError("unknown prior source '" + text + "'");
}

void check_vocab(const CaptionerModel& model, const CandidateSet& candidates) {
  const auto v = static_cast<int>(model.config().vocab_size);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    for (int t : candidates.captions[j]) {
      if (t < 0 || t >= v) {
        throw ContractError("candidate " + std::to_string(j) + " uses token id " +
                            std::to_string(t) + " outside the model vocab of " +
                            std::to_string(v));
      }
    }
    if (candidates.captions[j].size() > model.config().max_len + 1) {
      throw ContractError("candidate " + std::to_string(j) + " exceeds max_len");
    }
  }
}

PriorCache build_prior_cache(const CaptionerModel& model, const CandidateSet& candidates,
                             PriorSource source, const ScoreOptions& options) {
  candidates.validate();
  check_vocab(model, candidates);
  PriorCache cache;
  cache.source = source;
  cache.fingerprint = model.parameters().fingerprint();
  if (source == PriorSource::kZeroImage) {
    const ModelConfig& c = model.config();
    const Tensor memory =
        model.encode_image(Image::zeros(c.image_size, c.image_size, c.channels));
    cache.logp =
        model.sequence_logprobs(candidates.captions, &memory, options.length_normalize);
  } else {
    cache.logp =
        model.sequence_logprobs(candidates.captions, nullptr, options.length_normalize);
  }
  return cache;
}

ScoreMatrix score_mle(const CaptionerModel& model, std::span<const Image* const> images,
                      const CandidateSet& candidates, const ScoreOptions& options) {
  candidates.validate();
  check_vocab(model, candidates);
  if (images.empty()) throw ContractError("score_mle: no images");
  ScoreMatrix out(images.size(), candidates.size(), Objective::kMle, 0.0);
  auto score_rows = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < images.size(); i += stride) {
      const Tensor memory = model.encode_image(*images[i]);
      const std::vector<double> row =
          model.sequence_logprobs(candidates.captions, &memory, options.length_normalize);
      std::copy(row.begin(), row.end(), out.values.begin() + i * out.cols);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, images.size());
  if (workers == 1) {
    score_rows(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          score_rows(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

ScoreMatrix score_mle(const CaptionerModel& model, const Dataset& images,
                      const CandidateSet& candidates, const ScoreOptions& options) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& ex : images) ptrs.push_back(&ex.image);
  return score_mle(model, ptrs, candidates, options);
}

ScoreMatrix score_ig(const ScoreMatrix& mle, const PriorCache& prior, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ContractError("score_ig: alpha must be in [0, 1]");
  }
  if (prior.logp.size() != mle.cols) {
    throw ContractError("score_ig: prior has " + std::to_string(prior.logp.size()) +
                        " entries for " + std::to_string(mle.cols) + " candidates");
  }
  if (mle.values.size() != mle.rows * mle.cols) {
    throw ContractError("score_ig: malformed score matrix");
  }
  ScoreMatrix out(mle.rows, mle.cols, Objective::kIg, alpha);
  for (std::size_t i = 0; i < mle.rows; ++i) {
    for (std::size_t j = 0; j < mle.cols; ++j) {
      out.at(i, j) = mle.at(i, j) - alpha * prior.logp[j];
    }
  }
  return out;
}

ScoreMatrix score_lm_plus_cap(const CaptionerModel& cap_model,
                              const CaptionerModel& lm_model,
                              std::span<const Image* const> images,
                              const CandidateSet& candidates, double alpha,
                              const ScoreOptions& options) {
  if (cap_model.config().vocab_size != lm_model.config().vocab_size) {
    throw ContractError("lm_plus_cap: captioner and language model vocab sizes differ");
  }
  const PriorCache prior =
      build_prior_cache(lm_model, candidates, PriorSource::kExternalLm, options);
  return score_ig(score_mle(cap_model, images, candidates, options), prior, alpha);
}

std::string score_matrix_to_bytes(const ScoreMatrix& m) {
  std::ostringstream out;
  binary::write_le<std::uint64_t>(out, m.rows);
  binary::write_le<std::uint64_t>(out, m.cols);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.objective));
  binary::write_le<double>(out, m.alpha);
  for (double v : m.values) binary::write_le<double>(out, v);
  return out.str();
}

ScoreMatrix score_matrix_from_bytes(const std::string& bytes) {
  std::istringstream in(bytes);
  ScoreMatrix m;
  m.rows = binary::read_le<std::uint64_t>(in, "score matrix rows");
  m.cols = binary::read_le<std::uint64_t>(in, "score matrix cols");
  const auto tag = binary::read_le<std::uint32_t>(in, "score matrix objective");
  if (tag > 1) throw ParseError("score matrix: unknown objective tag " + std::to_string(tag));
  m.objective = static_cast<Objective>(tag);
  m.alpha = binary::read_le<double>(in, "score matrix alpha");
  const std::size_t expected = 28 + 8 * m.rows * m.cols;
  if (m.cols != 0 && m.rows > bytes.size() / 8 / m.cols) {
    throw ParseError("score matrix: extents exceed file size");
  }
  if (bytes.size() != expected) {
    throw ParseError("score matrix: expected " + std::to_string(expected) +
                     " bytes, found " + std::to_string(bytes.size()));
  }
  m.values.resize(m.rows * m.cols);
  for (double& v : m.values) {
    v = binary::read_le<double>(in, "score matrix values");
    if (!std::isfinite(v)) throw ParseError("score matrix: non-finite value");
  }
  return m;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << bytes;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void save_score_matrix(const ScoreMatrix& m, const std::filesystem::path& path) {
  write_file(path, score_matrix_to_bytes(m));
}

ScoreMatrix load_score_matrix(const std::filesystem::path& path) {
  try {
    return score_matrix_from_bytes(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_column_manifest(const CandidateSet& candidates,
                          const std::filesystem::path& path) {
  std::ostringstream out;
  out << "column\tclass_id\tprompt_index\n";
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    out << j << '\t' << candidates.labels[j] << '\t' << candidates.prompt_index[j] << '\n';
  }
  write_file(path, out.str());
}

void save_prior_cache(const PriorCache& prior, const std::filesystem::path& path) {
  std::ostringstream out;
  binary::write_le<std::uint64_t>(out, prior.logp.size());
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(prior.source));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(prior.fingerprint.size()));
  out << prior.fingerprint;
  for (double v : prior.logp) binary::write_le<double>(out, v);
  write_file(path, out.str());
}

PriorCache load_prior_cache(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  PriorCache p;
  const auto n = binary::read_le<std::uint64_t>(in, "prior count");
  const auto source = binary::read_le<std::uint32_t>(in, "prior source");
  if (source > 2) throw ParseError(path.string() + ": unknown prior source");
  p.source = static_cast<PriorSource>(source);
  const auto len = binary::read_le<std::uint32_t>(in, "prior fingerprint length");
  if (len > 64) throw ParseError(path.string() + ": bad fingerprint length");
  p.fingerprint.resize(len);
  in.read(p.fingerprint.data(), len);
  if (!in || n > bytes.size() / 8) throw ParseError(path.string() + ": truncated prior cache");
  p.logp.resize(n);
  for (double& v : p.logp) v = binary::read_le<double>(in, "prior values");
  return p;
}

}  // namespace capzero
