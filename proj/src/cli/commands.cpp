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


#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "capzero/checkpoint.hpp"
#include "capzero/cli.hpp"
#include "capzero/errors.hpp"

namespace capzero {
namespace {

namespace fs = std::filesystem;

RunConfig resolved(const RunConfig& config) {
  RunConfig c = config;
  c.resolve();
  return c;
}

void announce(const RunConfig& c, const char* command, std::ostream* log) {
  if (log == nullptr) return;
  *log << "# capzero " << command << " (config hash " << c.hash() << ")\n"
       << c.serialize() << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw IoError(std::string("missing ") + what + ": " + path.string());
  }
}

class Fnv {
 public:
  void mix(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void mix_value(const T& v) {
    mix(&v, sizeof v);
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ImageExtents extents_of(const RunConfig& c) {
  return {c.synthetic.image_size, c.synthetic.image_size, c.synthetic.channels};
}

CaptionerModel load_model(const fs::path& checkpoint) {
  const fs::path manifest = checkpoint.parent_path() / "model.manifest";
  require_file(checkpoint, "checkpoint");
  require_file(manifest, "model manifest");
  return CaptionerModel(ModelConfig::from_manifest(read_text(manifest)),
                        load_checkpoint(checkpoint));
}

// Shared inputs of eval and sweep.
struct EvalInputs {
  RunConfig config;
  Vocab vocab;
  CaptionerModel model;
  CandidateSet candidates;
  Dataset images;
  std::vector<int> labels;  // empty unless every image has a class
  ScoreOptions options;
  std::string data_key;
};

EvalInputs load_eval_inputs(const RunConfig& c) {
  const fs::path vocab_path = c.model_dir() / "vocab.txt";
  require_file(vocab_path, "model vocab");
  Vocab vocab = Vocab::load(vocab_path);
  CaptionerModel model = load_model(c.model_dir() / "checkpoint.bin");
  if (model.config().vocab_size != vocab.size()) {
    throw ContractError("vocab/checkpoint mismatch: checkpoint expects " +
                        std::to_string(model.config().vocab_size) + " tokens, " +
                        vocab_path.string() + " has " + std::to_string(vocab.size()));
  }
  const fs::path prompts = c.data_dir() / "prompts.tsv";
  const fs::path eval_set = c.data_dir() / "eval.jsonl";
  require_file(prompts, "prompt table");
  require_file(eval_set, "eval set");
  CandidateSet candidates = CandidateSet::from_prompts(read_prompt_table(prompts), vocab);
  check_vocab(model, candidates);
  ImageExtents ext{model.config().image_size, model.config().image_size,
                   model.config().channels};
  Dataset images = load_jsonl(eval_set, nullptr, ext);

  std::vector<int> labels;
  for (const auto& ex : images) {
    if (!ex.class_id) {
      labels.clear();
      break;
    }
    labels.push_back(*ex.class_id);
  }

  Fnv key;
  for (const auto& ex : images) key.mix(ex.image.pixels.data(), ex.image.pixels.size() * sizeof(double));
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    key.mix(candidates.captions[j].data(), candidates.captions[j].size() * sizeof(int));
    key.mix_value(candidates.labels[j]);
    key.mix_value(candidates.prompt_index[j]);
  }
  ScoreOptions options{c.eval.length_normalize, c.workers};
  return EvalInputs{c,
                    std::move(vocab),
                    std::move(model),
                    std::move(candidates),
                    std::move(images),
                    std::move(labels),
                    options,
                    key.hex()};
}

std::string cache_key(const std::string& fingerprint, const EvalInputs& in) {
  return "model " + fingerprint + "\ndata " + in.data_key + "\nlength_normalize " +
         (in.options.length_normalize ? "true" : "false") + "\n";
}

bool cache_hit(const fs::path& key_path, const std::string& key, const RunConfig& c) {
  if (!c.eval.reuse_cache || !fs::exists(key_path)) return false;
  return read_text(key_path) == key;
}

// MLE matrix, from the eval directory when its key matches.
ScoreMatrix mle_matrix(const EvalInputs& in, bool& scored) {
  const fs::path dir = in.config.eval_dir();
  make_dirs(dir);
  const fs::path path = dir / "scores_mle.bin";
  const fs::path key_path = dir / "scores_mle.key";
  const std::string key = cache_key(in.model.parameters().fingerprint(), in);
  if (cache_hit(key_path, key, in.config) && fs::exists(path)) {
    ScoreMatrix m = load_score_matrix(path);
    if (m.rows == in.images.size() && m.cols == in.candidates.size()) return m;
  }
  ScoreMatrix m = score_mle(in.model, in.images, in.candidates, in.options);
  scored = true;
  save_score_matrix(m, path);
  save_column_manifest(in.candidates, dir / "columns.tsv");
  write_text(key_path, key);
  return m;
}

PriorCache prior_for(const EvalInputs& in, PriorSource source, bool& scored) {
  const fs::path dir = in.config.eval_dir();
  make_dirs(dir);
  std::optional<CaptionerModel> lm;
  const CaptionerModel* model = &in.model;
  if (source == PriorSource::kExternalLm && !in.config.eval.lm_checkpoint.empty()) {
    lm.emplace(load_model(in.config.eval.lm_checkpoint));
    check_vocab(*lm, in.candidates);
    model = &*lm;
  }
  const std::string name = "prior_" + to_string(source);
  const fs::path path = dir / (name + ".bin");
  const fs::path key_path = dir / (name + ".key");
  const std::string key = cache_key(model->parameters().fingerprint(), in);
  if (cache_hit(key_path, key, in.config) && fs::exists(path)) {
    PriorCache p = load_prior_cache(path);
    if (p.logp.size() == in.candidates.size() && p.source == source) return p;
  }
  PriorCache p = build_prior_cache(*model, in.candidates, source, in.options);
  scored = true;
  save_prior_cache(p, path);
  write_text(key_path, key);
  return p;
}

PriorSource prior_source_of(const ObjectiveSpec& spec) {
  switch (spec.kind) {
    case ObjectiveSpec::Kind::kZeroImage:
      return PriorSource::kZeroImage;
    case ObjectiveSpec::Kind::kLmPlusCap:
      return PriorSource::kExternalLm;
    default:
      return PriorSource::kUnimodalMode;
  }
}

std::string file_tag(std::string label) {
  std::replace(label.begin(), label.end(), ':', '_');
  return label;
}

}  // namespace

GenSummary cmd_gen(const RunConfig& config, std::ostream* log) {
  const RunConfig c = resolved(config);
  announce(c, "gen", log);
  const SyntheticCorpus corpus = generate_synthetic(c.synthetic);
  const Vocab vocab = Vocab::build(corpus_texts(corpus));
  const fs::path dir = c.data_dir();
  make_dirs(dir);
  write_jsonl(corpus.train, dir, "train");
  write_jsonl(corpus.eval, dir, "eval");
  write_prompt_table(corpus.prompts, dir / "prompts.tsv");
  vocab.save(dir / "vocab.txt");

  GenSummary s;
  s.class_counts.assign(static_cast<std::size_t>(c.synthetic.num_classes), 0);
  std::map<std::string, std::size_t> class_of;
  for (const auto& p : corpus.prompts) class_of[p.text] = static_cast<std::size_t>(p.class_id);
  for (const auto& ex : corpus.train) ++s.class_counts[class_of.at(ex.caption)];
  s.num_train = corpus.train.size();
  s.num_eval = corpus.eval.size();
  s.vocab_size = vocab.size();
  s.expected_ratio = std::pow(2.0, c.synthetic.prior_skew);
  if (s.class_counts.size() >= 2 && s.class_counts[1] > 0) {
    s.skew_ratio = static_cast<double>(s.class_counts[0]) / static_cast<double>(s.class_counts[1]);
  }
  // Slope of log count against log rank over non-empty classes.
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < s.class_counts.size(); ++k) {
    if (s.class_counts[k] == 0) continue;
    const double x = std::log(static_cast<double>(k + 1));
    const double y = std::log(static_cast<double>(s.class_counts[k]));
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (n >= 2 && n * sxx - sx * sx > 0) s.fitted_skew = -(n * sxy - sx * sy) / (n * sxx - sx * sx);

  std::ostringstream text;
  text << std::setprecision(6);
  text << "train " << s.num_train << "\neval " << s.num_eval << "\nvocab " << s.vocab_size
       << "\nclass_counts";
  for (std::size_t k : s.class_counts) text << ' ' << k;
  text << "\nskew_ratio " << s.skew_ratio << " (expected " << s.expected_ratio << ")"
       << "\nfitted_skew " << s.fitted_skew << " (configured " << c.synthetic.prior_skew << ")\n";
  write_text(dir / "summary.txt", text.str());
  if (log != nullptr) *log << text.str() << "wrote " << dir.string() << '\n';
  return s;
}

TrainOutcome cmd_train(const RunConfig& config, std::ostream* log) {
  const RunConfig c = resolved(config);
  announce(c, "train", log);
  const fs::path data = c.data_dir();
  require_file(data / "vocab.txt", "vocab (run gen first)");
  require_file(data / "train.jsonl", "train set (run gen first)");
  const Vocab vocab = Vocab::load(data / "vocab.txt");
  const Dataset train_set = load_jsonl(data / "train.jsonl", &vocab, extents_of(c));
  if (train_set.empty()) throw ConfigError("train set is empty");

  ModelConfig mc = c.model;
  mc.vocab_size = vocab.size();
  std::size_t longest = 0;
  for (const auto& ex : train_set) longest = std::max(longest, ex.tokens.size());
  for (const auto& p : read_prompt_table(data / "prompts.tsv")) {
    longest = std::max(longest, vocab.encode(p.text).size());
  }
  if (longest > mc.max_len) {
    throw ConfigError("model.max_len = " + std::to_string(mc.max_len) +
                      " is shorter than the longest caption (" + std::to_string(longest) +
                      " tokens)");
  }
  mc.validate();
  CaptionerModel model(mc);

  const fs::path out = c.model_dir();
  make_dirs(out);
  write_text(out / "model.manifest", mc.to_manifest());
  vocab.save(out / "vocab.txt");

  TrainHooks hooks;
  const std::size_t every = std::max<std::size_t>(1, c.train.steps / 20);
  hooks.on_step = [&](const TrainLogRecord& r) {
    if (log != nullptr && (r.step % every == 0 || r.step == 1)) {
      *log << "step " << r.step << " L " << r.combined << " l_multi " << r.l_multi << " l_uni "
           << r.l_uni << " lr " << r.lr << " |g| " << r.grad_norm << '\n';
    }
  };
  hooks.on_checkpoint = [&](std::size_t step, const CaptionerModel& m) {
    save_checkpoint(m.parameters(), out / ("checkpoint_step" + std::to_string(step) + ".bin"));
  };

  TrainOutcome result;
  result.log = train(model, train_set, c.train, hooks);
  save_checkpoint(model.parameters(), out / "checkpoint.bin");
  write_train_log(result.log, out / "train_log.csv");
  result.fingerprint = model.parameters().fingerprint();
  if (log != nullptr) {
    *log << "checkpoint " << (out / "checkpoint.bin").string() << " fingerprint "
         << result.fingerprint << '\n';
  }
  return result;
}

EvalOutcome cmd_eval(const RunConfig& config, std::ostream* log) {
  const RunConfig c = resolved(config);
  announce(c, "eval", log);
  const ObjectiveSpec spec = ObjectiveSpec::parse(c.eval.objective);
  const EvalInputs in = load_eval_inputs(c);

  EvalOutcome out;
  const ScoreMatrix mle = mle_matrix(in, out.scored_model);
  const PriorSource source = prior_source_of(spec);
  const PriorCache prior = prior_for(in, source, out.scored_model);

  const bool is_mle = spec.kind == ObjectiveSpec::Kind::kMle;
  const ScoreMatrix scores = is_mle ? mle : score_ig(mle, prior, spec.alpha);

  EvalReport& r = out.report;
  r.timestamp = utc_timestamp();
  r.config_hash = c.hash();
  r.checkpoint_fingerprint = in.model.parameters().fingerprint();
  r.objective = spec.to_string();
  r.prior_source = to_string(source);
  r.classification = classify_voting(scores, in.candidates, in.labels);
  r.pcc.push_back(mean_image_pcc(mle, prior, is_mle ? Objective::kMle : Objective::kIg,
                                 spec.alpha));
  if (c.eval.retrieval && !in.labels.empty()) {
    TruthMap truth(in.images.size());
    for (std::size_t i = 0; i < in.images.size(); ++i) {
      for (std::size_t j = 0; j < in.candidates.size(); ++j) {
        if (in.candidates.labels[j] == in.labels[i]) truth[i].push_back(j);
      }
    }
    r.retrieval = retrieval_recalls(scores, truth, c.eval.recall_ks);
  }

  const std::string tag = file_tag(spec.to_string());
  write_text(c.eval_dir() / ("report_" + tag + ".json"), report_json(r));
  write_text(c.eval_dir() / ("report_" + tag + ".txt"), report_text(r));
  if (log != nullptr) {
    *log << report_text(r) << "wrote " << (c.eval_dir() / ("report_" + tag + ".json")).string()
         << (out.scored_model ? "" : " (scores from cache)") << '\n';
  }
  return out;
}

SweepOutcome cmd_sweep(const RunConfig& config, std::ostream* log) {
  const RunConfig c = resolved(config);
  announce(c, "sweep", log);
  const EvalInputs in = load_eval_inputs(c);
  if (in.labels.empty()) throw ConfigError("sweep needs class ids on every eval image");
  SweepOutcome out;
  const ScoreMatrix mle = mle_matrix(in, out.scored_model);
  const PriorCache prior = prior_for(in, c.eval.sweep_prior, out.scored_model);
  out.rows = alpha_sweep(mle, prior, in.candidates, in.labels, c.eval.grid);
  make_dirs(c.sweep_dir());
  const fs::path path = c.sweep_dir() / ("sweep_" + to_string(c.eval.sweep_prior) + ".csv");
  write_sweep_csv(out.rows, path);
  if (log != nullptr) {
    *log << sweep_csv(out.rows) << "wrote " << path.string()
         << (out.scored_model ? "" : " (scores from cache)") << '\n';
  }
  return out;
}

}  // namespace capzero
