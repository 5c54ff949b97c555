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


#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "capzero/cli.hpp"
#include "capzero/errors.hpp"

namespace capzero {
namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  return parts;
}

struct Field {
  const char* section;
  const char* key;
  bool is_path;  // left out of the hash: locations and knobs that cannot change results
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> put;
};

#define CZ_UINT(SEC, KEY, EXPR)                                                  \
  Field{SEC, #KEY, false, [](const RunConfig& c) { return std::to_string(c.EXPR); }, \
        [](RunConfig& c, const std::string& v) {                                 \
          c.EXPR = static_cast<decltype(c.EXPR)>(parse_uint(SEC "." #KEY, v));   \
        }}
#define CZ_INT(SEC, KEY, EXPR)                                                   \
  Field{SEC, #KEY, false, [](const RunConfig& c) { return std::to_string(c.EXPR); }, \
        [](RunConfig& c, const std::string& v) {                                 \
          const auto n = parse_uint(SEC "." #KEY, v);                            \
          if (n > 1000000) throw ConfigError(SEC "." #KEY ": value too large");   \
          c.EXPR = static_cast<int>(n);                                          \
        }}
#define CZ_DOUBLE(SEC, KEY, EXPR)                                                \
  Field{SEC, #KEY, false, [](const RunConfig& c) { return fmt_double(c.EXPR); }, \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_double(SEC "." #KEY, v); }}
#define CZ_BOOL(SEC, KEY, EXPR)                                                  \
  Field{SEC, #KEY, false,                                                        \
        [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(SEC "." #KEY, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CZ_UINT("run", seed, seed),
      Field{"run", "output_dir", true, [](const RunConfig& c) { return c.output_dir; },
            [](RunConfig& c, const std::string& v) {
              if (v.empty()) throw ConfigError("run.output_dir: must not be empty");
              c.output_dir = v;
            }},
      Field{"run", "workers", true, [](const RunConfig& c) { return std::to_string(c.workers); },
            [](RunConfig& c, const std::string& v) { c.workers = parse_uint("run.workers", v); }},

      CZ_INT("synthetic", num_classes, synthetic.num_classes),
      CZ_INT("synthetic", prompts_per_class, synthetic.prompts_per_class),
      CZ_UINT("synthetic", image_size, synthetic.image_size),
      CZ_UINT("synthetic", channels, synthetic.channels),
      CZ_UINT("synthetic", cell_size, synthetic.cell_size),
      CZ_UINT("synthetic", mark_size, synthetic.mark_size),
      CZ_DOUBLE("synthetic", background, synthetic.background),
      CZ_DOUBLE("synthetic", signal_min, synthetic.signal_min),
      CZ_DOUBLE("synthetic", signal_max, synthetic.signal_max),
      CZ_DOUBLE("synthetic", noise_sigma, synthetic.noise_sigma),
      CZ_DOUBLE("synthetic", prior_skew, synthetic.prior_skew),
      CZ_DOUBLE("synthetic", mismatch_rate, synthetic.mismatch_rate),
      CZ_DOUBLE("synthetic", mismatch_skew, synthetic.mismatch_skew),
      CZ_UINT("synthetic", num_train, synthetic.num_train),
      CZ_UINT("synthetic", eval_per_class, synthetic.eval_per_class),

      CZ_UINT("model", patch_size, model.patch_size),
      CZ_UINT("model", d_model, model.d_model),
      CZ_UINT("model", n_heads, model.n_heads),
      CZ_UINT("model", encoder_layers, model.encoder_layers),
      CZ_UINT("model", decoder_layers, model.decoder_layers),
      CZ_UINT("model", max_len, model.max_len),
      CZ_DOUBLE("model", dropout, model.dropout),
      CZ_DOUBLE("model", init_std, model.init_std),

      CZ_UINT("train", batch_size, train.batch_size),
      CZ_UINT("train", steps, train.steps),
      CZ_DOUBLE("train", warmup_fraction, train.warmup_fraction),
      CZ_DOUBLE("train", peak_lr, train.peak_lr),
      Field{"train", "decay", false, [](const RunConfig& c) { return to_string(c.train.decay); },
            [](RunConfig& c, const std::string& v) { c.train.decay = parse_lr_decay(v); }},
      CZ_DOUBLE("train", beta, train.beta),
      CZ_DOUBLE("train", gamma, train.gamma),
      CZ_DOUBLE("train", grad_clip, train.grad_clip),
      CZ_DOUBLE("train", weight_decay, train.weight_decay),
      CZ_UINT("train", eval_every, train.eval_every),

      Field{"eval", "objective", false, [](const RunConfig& c) { return c.eval.objective; },
            [](RunConfig& c, const std::string& v) {
              c.eval.objective = ObjectiveSpec::parse(v).to_string();
            }},
      Field{"eval", "sweep_prior", false,
            [](const RunConfig& c) { return to_string(c.eval.sweep_prior); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.eval.sweep_prior = parse_prior_source(v);
              } catch (const std::exception& e) {
                throw ConfigError(std::string("eval.sweep_prior: ") + e.what());
              }
            }},
      Field{"eval", "grid", false, [](const RunConfig& c) { return join(c.eval.grid); },
            [](RunConfig& c, const std::string& v) {
              std::vector<double> grid;
              for (const auto& part : split_commas(v)) grid.push_back(parse_double("eval.grid", part));
              c.eval.grid = std::move(grid);
            }},
      CZ_BOOL("eval", length_normalize, eval.length_normalize),
      CZ_BOOL("eval", retrieval, eval.retrieval),
      Field{"eval", "recall_ks", false, [](const RunConfig& c) { return join(c.eval.recall_ks); },
            [](RunConfig& c, const std::string& v) {
              std::vector<std::size_t> ks;
              for (const auto& part : split_commas(v)) ks.push_back(parse_uint("eval.recall_ks", part));
              c.eval.recall_ks = std::move(ks);
            }},
      Field{"eval", "reuse_cache", true,
            [](const RunConfig& c) { return std::string(c.eval.reuse_cache ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) {
              c.eval.reuse_cache = parse_bool("eval.reuse_cache", v);
            }},
      Field{"eval", "lm_checkpoint", true, [](const RunConfig& c) { return c.eval.lm_checkpoint; },
            [](RunConfig& c, const std::string& v) { c.eval.lm_checkpoint = v; }},
  };
  return table;
}

#undef CZ_UINT
#undef CZ_INT
#undef CZ_DOUBLE
#undef CZ_BOOL

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return f;
  }
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

std::string serialize_fields(const RunConfig& c, bool with_paths) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.is_path && !with_paths) continue;
    if (current != f.section) {
      if (!current.empty()) out += '\n';
      current = f.section;
      out += "[" + current + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(c) + "\n";
  }
  return out;
}

}  // namespace

std::string ObjectiveSpec::to_string() const {
  switch (kind) {
    case Kind::kMle:
      return "mle";
    case Kind::kIg:
      return "ig:" + fmt_double(alpha);
    case Kind::kZeroImage:
      return "zero_image:" + fmt_double(alpha);
    case Kind::kLmPlusCap:
      return "lm_plus_cap:" + fmt_double(alpha);
  }
  return "mle";
}

ObjectiveSpec ObjectiveSpec::parse(const std::string& text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  const std::string name = t.substr(0, colon);
  ObjectiveSpec spec;
  if (name == "mle") {
    if (colon != std::string::npos) throw ConfigError("objective 'mle' takes no alpha");
    return spec;
  }
  if (name == "ig") {
    spec.kind = Kind::kIg;
  } else if (name == "zero_image") {
    spec.kind = Kind::kZeroImage;
  } else if (name == "lm_plus_cap") {
    spec.kind = Kind::kLmPlusCap;
    spec.alpha = 1.0;
  } else {
    throw ConfigError("unknown objective '" + t +
                      "' (expected mle, ig:A, zero_image:A or lm_plus_cap)");
  }
  if (colon == std::string::npos) {
    if (spec.kind != Kind::kLmPlusCap) throw ConfigError("objective '" + t + "' needs ':alpha'");
    return spec;
  }
  spec.alpha = parse_double("objective alpha", t.substr(colon + 1));
  if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0)) {
    throw ConfigError("objective alpha must be in [0, 1], got " + t.substr(colon + 1));
  }
  return spec;
}

std::string RunConfig::serialize() const { return serialize_fields(*this, true); }

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside any section");
    try {
      c.set(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const std::exception& e) {
      throw ConfigError(where + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("expected section.key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
      trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  const Field& f = find_field(section, key);
  try {
    f.put(*this, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

void RunConfig::resolve() {
  synthetic.seed = seed;
  train.seed = seed;
  model.seed = seed;
  model.image_size = synthetic.image_size;
  model.channels = synthetic.channels;
  if (workers == 0) throw ConfigError("run.workers must be positive");
  if (eval.grid.empty()) throw ConfigError("eval.grid must not be empty");
  for (double a : eval.grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("eval.grid values must be in [0, 1]");
  }
  if (eval.recall_ks.empty()) throw ConfigError("eval.recall_ks must not be empty");
  ObjectiveSpec::parse(eval.objective);
  try {
    synthetic.validate();
    train.validate();
    ModelConfig check = model;
    check.vocab_size = std::max<std::size_t>(check.vocab_size, 4);
    check.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::hash() const {
  const std::string text = serialize_fields(*this, false);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path RunConfig::output_root() const {
  fs::path dir(output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
      return fs::path(root) / dir;
    }
  }
  return dir;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return kExitIo;
  if (dynamic_cast<const ParseError*>(&e) != nullptr) return kExitIo;
  return kExitOther;
}

}  // namespace capzero
