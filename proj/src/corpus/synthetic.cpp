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

#include "capzero/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "capzero/errors.hpp"
#include "capzero/random.hpp"

namespace capzero {

namespace {

enum Stream : std::uint64_t { kLayout = 1, kTrain = 2, kEval = 3 };

std::array<double, 3> hue_color(double hue) {
  // HSV with full saturation and value.
  const double h = 6.0 * (hue - std::floor(hue));
  const double f = h - std::floor(h);
  switch (static_cast<int>(std::floor(h)) % 6) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

Image render(const SyntheticSpec& spec, const ClassSignature& sig,
             double strength, Rng* noise) {
  Image img = Image::zeros(spec.image_size, spec.image_size, spec.channels);
  const std::size_t offset = (spec.cell_size - spec.mark_size) / 2;
  const std::size_t y0 = sig.cell_row * spec.cell_size + offset;
  const std::size_t x0 = sig.cell_col * spec.cell_size + offset;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const bool inside = y >= y0 && y < y0 + spec.mark_size && x >= x0 &&
                          x < x0 + spec.mark_size;
      for (std::size_t c = 0; c < img.channels; ++c) {
        double v = spec.background;
        if (inside) v += strength * (sig.color[c % 3] - spec.background);
        if (noise != nullptr && spec.noise_sigma > 0.0) {
          v += noise->normal(0.0, spec.noise_sigma);
        }
        img.at(y, x, c) = to_float_precision(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("synthetic spec: " + msg); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (prompts_per_class < 1) fail("prompts_per_class must be >= 1");
  if (static_cast<std::size_t>(prompts_per_class) > default_templates().size()) {
    fail("at most " + std::to_string(default_templates().size()) +
         " prompts per class are available");
  }
  if (!(prior_skew >= 0.0)) fail("prior_skew must be >= 0");
  if (image_size == 0 || channels == 0) fail("image extents must be positive");
  if (cell_size == 0 || image_size % cell_size != 0) {
    fail("image_size must be a multiple of cell_size");
  }
  if (mark_size == 0 || mark_size > cell_size) fail("mark_size must be in [1, cell_size]");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(signal_min >= 0.0 && signal_max >= signal_min)) {
    fail("signal range must satisfy 0 <= signal_min <= signal_max");
  }
  if (!(background >= 0.0 && background <= 1.0)) fail("background must be in [0, 1]");
  if (!(mismatch_rate >= 0.0 && mismatch_rate <= 1.0)) fail("mismatch_rate must be in [0, 1]");
  if (!(mismatch_skew >= 0.0) || !std::isfinite(mismatch_skew)) {
    fail("mismatch_skew must be finite and >= 0");
  }
}

std::vector<double> zipf_weights(int n, double s) {
  std::vector<double> w(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    w[static_cast<std::size_t>(k)] = std::pow(static_cast<double>(k + 1), -s);
    total += w[static_cast<std::size_t>(k)];
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<std::string> default_class_names(int num_classes) {
  static const std::vector<std::string> kNames = {
      "cat",  "dog",  "bird", "fish",  "horse", "frog",  "ship",  "truck",
      "plane", "deer", "lion", "bear",  "wolf",  "fox",   "owl",   "duck",
      "goat", "sheep", "cow",  "pig",   "crab",  "snake", "whale", "shark"};
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) {
    names.push_back(static_cast<std::size_t>(c) < kNames.size()
                        ? kNames[static_cast<std::size_t>(c)]
                        : "class" + std::to_string(c));
  }
  return names;
}

const std::vector<std::string>& default_templates() {
  // Equal token counts keep unnormalized caption scores comparable.
  static const std::vector<std::string> kTemplates = {
      "a photo of a {}",     "a picture of a {}",  "an image of a {}",
      "a photo of the {}",   "a picture of the {}", "an image of the {}",
      "a snapshot of a {}",  "a rendering of a {}", "a drawing of a {}",
      "a sketch of the {}",  "a closeup of a {}",   "a render of the {}"};
  return kTemplates;
}

std::string fill_template(const std::string& templ, const std::string& name) {
  const auto pos = templ.find("{}");
  if (pos == std::string::npos) return templ + " " + name;
  return templ.substr(0, pos) + name + templ.substr(pos + 2);
}

std::vector<ClassSignature> make_signatures(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(Rng::derive(spec.seed, kLayout));
  const std::size_t side = spec.image_size / spec.cell_size;
  std::vector<std::size_t> cells(side * side);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  rng.shuffle(cells);
  const double hue_offset = rng.uniform();
  std::vector<ClassSignature> sigs;
  for (int c = 0; c < spec.num_classes; ++c) {
    const std::size_t cell = cells[static_cast<std::size_t>(c) % cells.size()];
    ClassSignature sig;
    sig.cell_row = cell / side;
    sig.cell_col = cell % side;
    sig.color = hue_color(hue_offset + static_cast<double>(c) / spec.num_classes);
    sigs.push_back(sig);
  }
  return sigs;
}

Image render_clean(const SyntheticSpec& spec, const ClassSignature& sig,
                   double strength) {
  return render(spec, sig, strength, nullptr);
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.class_names = default_class_names(spec.num_classes);
  corpus.class_weights = zipf_weights(spec.num_classes, spec.prior_skew);
  corpus.signatures = make_signatures(spec);
  const auto& templates = default_templates();
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int p = 0; p < spec.prompts_per_class; ++p) {
      corpus.prompts.push_back(
          {c, p, fill_template(templates[static_cast<std::size_t>(p)],
                               corpus.class_names[static_cast<std::size_t>(c)])});
    }
  }
  auto caption_for = [&](int cls, int prompt) {
    return corpus.prompts[static_cast<std::size_t>(cls * spec.prompts_per_class + prompt)].text;
  };
  auto strength = [&](Rng& rng) {
    return spec.signal_min + (spec.signal_max - spec.signal_min) * rng.uniform();
  };

  Rng train_rng(Rng::derive(spec.seed, kTrain));
  corpus.train.reserve(spec.num_train);
  const std::vector<double> mismatch_weights =
      zipf_weights(spec.num_classes, spec.mismatch_skew);
  for (std::size_t i = 0; i < spec.num_train; ++i) {
    const int cls = static_cast<int>(train_rng.categorical(corpus.class_weights));
    int caption_cls = cls;
    if (spec.mismatch_rate > 0.0 && train_rng.uniform() < spec.mismatch_rate) {
      caption_cls = static_cast<int>(train_rng.categorical(mismatch_weights));
    }
    const int prompt = static_cast<int>(
        train_rng.uniform_int(static_cast<std::uint64_t>(spec.prompts_per_class)));
    MultimodalExample ex;
    ex.image = render(spec, corpus.signatures[static_cast<std::size_t>(cls)],
                      strength(train_rng), &train_rng);
    ex.caption = caption_for(caption_cls, prompt);
    corpus.train.push_back(std::move(ex));
  }

  Rng eval_rng(Rng::derive(spec.seed, kEval));
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (std::size_t k = 0; k < spec.eval_per_class; ++k) {
      MultimodalExample ex;
      ex.image = render(spec, corpus.signatures[static_cast<std::size_t>(cls)],
                        strength(eval_rng), &eval_rng);
      ex.caption = caption_for(cls, static_cast<int>(k % static_cast<std::size_t>(spec.prompts_per_class)));
      ex.class_id = cls;
      corpus.eval.push_back(std::move(ex));
    }
  }
  return corpus;
}

std::vector<std::string> corpus_texts(const SyntheticCorpus& corpus) {
  std::vector<std::string> texts;
  texts.reserve(corpus.train.size() + corpus.prompts.size());
  for (const auto& ex : corpus.train) texts.push_back(ex.caption);
  for (const auto& p : corpus.prompts) texts.push_back(p.text);
  return texts;
}

}  // namespace capzero
