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

#include "capzero/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "capzero/errors.hpp"

namespace capzero {

std::string objective_label(Objective objective, double alpha) {
  if (objective == Objective::kMle) return "mle";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "ig:%g", alpha);
  return buf;
}

ClassificationReport classify_voting(const ScoreMatrix& scores,
                                     const CandidateSet& candidates,
                                     std::span<const int> truth) {
  candidates.validate();
  if (scores.cols != candidates.size()) {
    throw ContractError("classify_voting: matrix has " + std::to_string(scores.cols) +
                        " columns for " + std::to_string(candidates.size()) +
                        " candidates");
  }
  if (!truth.empty() && truth.size() != scores.rows) {
    throw ContractError("classify_voting: truth labels do not match image count");
  }
  // prompt index -> class id -> column
  std::map<int, std::map<int, std::size_t>> by_prompt;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    by_prompt[candidates.prompt_index[j]][candidates.labels[j]] = j;
    by_class[candidates.labels[j]].push_back(j);
  }
  ClassificationReport r;
  for (const auto& [cls, cols] : by_class) r.classes.push_back(cls);
  for (const auto& [p, members] : by_prompt) {
    if (members.size() != r.classes.size()) {
      throw ContractError("classify_voting: prompt " + std::to_string(p) +
                          " is missing for some classes (ragged prompt counts)");
    }
  }
  std::map<int, std::size_t> class_pos;
  for (std::size_t c = 0; c < r.classes.size(); ++c) class_pos[r.classes[c]] = c;

  r.objective = scores.objective;
  r.alpha = scores.alpha;
  r.predictions.resize(scores.rows);
  std::vector<std::size_t> votes(r.classes.size());
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const auto& [p, members] : by_prompt) {
      // members iterate in ascending class id, so strict > keeps the lowest.
      int best_class = 0;
      double best = -std::numeric_limits<double>::infinity();
      bool first = true;
      for (const auto& [cls, col] : members) {
        const double s = scores.at(i, col);
        if (first || s > best) {
          best = s;
          best_class = cls;
          first = false;
        }
      }
      ++votes[class_pos[best_class]];
    }
    std::size_t winner = 0;
    double winner_sum = 0.0;
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
      double total = 0.0;
      for (std::size_t col : by_class[r.classes[c]]) total += scores.at(i, col);
      if (c == 0 || votes[c] > votes[winner] ||
          (votes[c] == votes[winner] && total > winner_sum)) {
        winner = c;
        winner_sum = total;
      }
    }
    r.predictions[i] = r.classes[winner];
  }

  if (!truth.empty()) {
    const std::size_t k = r.classes.size();
    r.num_images = scores.rows;
    r.class_counts.assign(k, 0);
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < scores.rows; ++i) {
      auto it = class_pos.find(truth[i]);
      if (it == class_pos.end()) {
        throw ContractError("classify_voting: image " + std::to_string(i) +
                            " has class " + std::to_string(truth[i]) +
                            " with no candidates");
      }
      ++r.class_counts[it->second];
      ++r.confusion[it->second][class_pos[r.predictions[i]]];
      if (truth[i] == r.predictions[i]) ++r.num_correct;
    }
    r.top1 = scores.rows == 0 ? 0.0
                              : static_cast<double>(r.num_correct) /
                                    static_cast<double>(scores.rows);
    r.per_class_accuracy.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
      r.per_class_accuracy[c] =
          r.class_counts[c] == 0
              ? std::numeric_limits<double>::quiet_NaN()
              : static_cast<double>(r.confusion[c][c]) / static_cast<double>(r.class_counts[c]);
    }
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("pearson: lengths differ");
  if (x.size() < 2) throw ContractError("pearson: need at least two points");
  const auto n = static_cast<long double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0 || syy == 0) {
    throw DegenerateInputError("pearson: zero variance input");
  }
  const long double r = sxy / std::sqrt(sxx * syy);
  return static_cast<double>(std::clamp(r, -1.0L, 1.0L));
}

PccReport mean_image_pcc(const ScoreMatrix& mle, const PriorCache& prior,
                         Objective objective, double alpha) {
  if (prior.logp.size() != mle.cols) {
    throw ContractError("mean_image_pcc: prior does not match candidate count");
  }
  if (mle.rows == 0) throw ContractError("mean_image_pcc: no images");
  PccReport r;
  r.pair = "logP(T) vs " + objective_label(objective, alpha);
  r.per_image.assign(mle.rows, std::numeric_limits<double>::quiet_NaN());
  const double a = objective == Objective::kMle ? 0.0 : alpha;
  std::vector<double> row(mle.cols);
  long double total = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < mle.rows; ++i) {
    for (std::size_t j = 0; j < mle.cols; ++j) row[j] = mle.at(i, j) - a * prior.logp[j];
    try {
      r.per_image[i] = pearson(prior.logp, row);
      total += r.per_image[i];
      ++used;
    } catch (const DegenerateInputError&) {
      r.excluded.push_back(i);
    }
  }
  if (used == 0) {
    throw DegenerateInputError("mean_image_pcc: every image has zero variance");
  }
  r.mean_pcc = static_cast<double>(total / static_cast<long double>(used));
  return r;
}

std::string to_string(RetrievalDirection d) {
  return d == RetrievalDirection::kImageToText ? "image_to_text" : "text_to_image";
}

namespace {

// 0-based rank of `target` among `n` items scored by get(k).
template <typename Get>
std::size_t rank_of(std::size_t target, std::size_t n, Get get) {
  const double s = get(target);
  std::size_t rank = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double v = get(k);
    if (v > s || (v == s && k < target)) ++rank;
  }
  return rank;
}

RetrievalReport recall_report(RetrievalDirection dir, const std::vector<std::size_t>& ks,
                              const std::vector<std::size_t>& best_ranks) {
  RetrievalReport r;
  r.direction = dir;
  r.ks = ks;
  r.num_queries = best_ranks.size();
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t rank : best_ranks) hits += rank < k ? 1 : 0;
    r.recalls.push_back(best_ranks.empty() ? 0.0
                                           : static_cast<double>(hits) /
                                                 static_cast<double>(best_ranks.size()));
  }
  return r;
}

}  // namespace

std::vector<RetrievalReport> retrieval_recalls(const ScoreMatrix& scores,
                                               const TruthMap& truth,
                                               std::vector<std::size_t> ks) {
  if (truth.size() != scores.rows) {
    throw ContractError("retrieval: truth map must cover every image");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.empty() || ks.front() == 0) throw ContractError("retrieval: K must be >= 1");
  if (ks.back() > scores.cols) {
    throw ContractError("retrieval: K=" + std::to_string(ks.back()) + " exceeds " +
                        std::to_string(scores.cols) + " candidate captions");
  }
  if (ks.back() > scores.rows) {
    throw ContractError("retrieval: K=" + std::to_string(ks.back()) + " exceeds " +
                        std::to_string(scores.rows) + " candidate images");
  }
  std::vector<std::vector<std::size_t>> images_of(scores.cols);
  std::vector<std::size_t> i2t;
  for (std::size_t i = 0; i < scores.rows; ++i) {
    if (truth[i].empty()) {
      throw ContractError("retrieval: image " + std::to_string(i) + " has no correct caption");
    }
    std::size_t best = scores.cols;
    for (std::size_t j : truth[i]) {
      if (j >= scores.cols) throw IndexError("retrieval: caption index out of range");
      images_of[j].push_back(i);
      best = std::min(best, rank_of(j, scores.cols,
                                    [&](std::size_t k) { return scores.at(i, k); }));
    }
    i2t.push_back(best);
  }
  std::vector<std::size_t> t2i;
  for (std::size_t j = 0; j < scores.cols; ++j) {
    if (images_of[j].empty()) continue;
    std::size_t best = scores.rows;
    for (std::size_t i : images_of[j]) {
      best = std::min(best, rank_of(i, scores.rows,
                                    [&](std::size_t k) { return scores.at(k, j); }));
    }
    t2i.push_back(best);
  }
  return {recall_report(RetrievalDirection::kImageToText, ks, i2t),
          recall_report(RetrievalDirection::kTextToImage, ks, t2i)};
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 10; ++k) grid.push_back(k / 10.0);
  return grid;
}

std::vector<SweepRow> alpha_sweep(const ScoreMatrix& mle, const PriorCache& prior,
                                  const CandidateSet& candidates,
                                  std::span<const int> labels,
                                  std::span<const double> grid) {
  if (grid.empty()) throw ContractError("alpha_sweep: empty grid");
  if (labels.size() != mle.rows) {
    throw ContractError("alpha_sweep: labels do not match image count");
  }
  std::vector<SweepRow> rows;
  for (double alpha : grid) {
    const ScoreMatrix ig = score_ig(mle, prior, alpha);
    const ClassificationReport cls = classify_voting(ig, candidates, labels);
    const PccReport pcc = mean_image_pcc(mle, prior, Objective::kIg, alpha);
    rows.push_back({alpha, cls.top1, pcc.mean_pcc, pcc.excluded.size()});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "alpha,top1,mean_pcc,r_excluded\n";
  char buf[128];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.17g,%.17g,%zu\n", r.alpha, r.top1, r.mean_pcc,
                  r.r_excluded);
    out << buf;
  }
  return out.str();
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write sweep csv: " + path.string());
  out << sweep_csv(rows);
  if (!out) throw IoError("failed writing sweep csv: " + path.string());
}

namespace {

using nlohmann::ordered_json;

ordered_json number_or_null(double v) {
  return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

}  // namespace

std::string report_json(const EvalReport& report) {
  ordered_json j;
  j["timestamp"] = report.timestamp;
  j["config_hash"] = report.config_hash;
  j["checkpoint_fingerprint"] = report.checkpoint_fingerprint;
  j["objective"] = report.objective;
  j["prior_source"] = report.prior_source;
  if (report.classification) {
    const ClassificationReport& c = *report.classification;
    ordered_json cj;
    cj["objective"] = objective_label(c.objective, c.alpha);
    cj["alpha"] = c.alpha;
    cj["num_images"] = c.num_images;
    cj["top1"] = c.top1;
    cj["classes"] = c.classes;
    cj["class_counts"] = c.class_counts;
    ordered_json per_class = ordered_json::array();
    for (double v : c.per_class_accuracy) per_class.push_back(number_or_null(v));
    cj["per_class_accuracy"] = per_class;
    cj["confusion"] = c.confusion;
    cj["predictions"] = c.predictions;
    j["classification"] = cj;
  }
  ordered_json pccs = ordered_json::array();
  for (const PccReport& p : report.pcc) {
    ordered_json pj;
    pj["pair"] = p.pair;
    pj["mean_pcc"] = p.mean_pcc;
    pj["excluded"] = p.excluded;
    ordered_json per = ordered_json::array();
    for (double v : p.per_image) per.push_back(number_or_null(v));
    pj["per_image"] = per;
    pccs.push_back(pj);
  }
  j["pcc"] = pccs;
  ordered_json rets = ordered_json::array();
  for (const RetrievalReport& r : report.retrieval) {
    ordered_json rj;
    rj["direction"] = to_string(r.direction);
    rj["num_queries"] = r.num_queries;
    for (std::size_t k = 0; k < r.ks.size(); ++k) {
      rj["R@" + std::to_string(r.ks[k])] = r.recalls[k];
    }
    rets.push_back(rj);
  }
  j["retrieval"] = rets;
  if (!report.sweep.empty()) {
    ordered_json sw = ordered_json::array();
    for (const SweepRow& s : report.sweep) {
      sw.push_back({{"alpha", s.alpha},
                    {"top1", s.top1},
                    {"mean_pcc", s.mean_pcc},
                    {"r_excluded", s.r_excluded}});
    }
    j["sweep"] = sw;
  }
  return j.dump(2) + "\n";
}

std::string report_text(const EvalReport& report) {
  std::ostringstream out;
  char buf[256];
  auto line = [&](const char* key, const std::string& value) {
    std::snprintf(buf, sizeof(buf), "%-24s %s\n", key, value.c_str());
    out << buf;
  };
  line("timestamp", report.timestamp);
  line("config hash", report.config_hash);
  line("checkpoint", report.checkpoint_fingerprint);
  line("objective", report.objective);
  line("prior source", report.prior_source);
  if (report.classification) {
    const ClassificationReport& c = *report.classification;
    std::snprintf(buf, sizeof(buf), "%.4f (%zu/%zu)", c.top1, c.num_correct, c.num_images);
    line("top-1", buf);
    out << "\n  class  images  accuracy\n";
    for (std::size_t k = 0; k < c.classes.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "  %5d  %6zu  %8.4f\n", c.classes[k],
                    c.class_counts.empty() ? 0 : c.class_counts[k],
                    c.per_class_accuracy.empty() ? 0.0 : c.per_class_accuracy[k]);
      out << buf;
    }
  }
  if (!report.pcc.empty()) {
    out << "\n  " << std::string("pair") << std::string(28, ' ') << "mean_pcc  excluded\n";
    for (const PccReport& p : report.pcc) {
      std::snprintf(buf, sizeof(buf), "  %-30s  %8.4f  %8zu\n", p.pair.c_str(), p.mean_pcc,
                    p.excluded.size());
      out << buf;
    }
  }
  for (const RetrievalReport& r : report.retrieval) {
    out << "\n  " << to_string(r.direction) << " (" << r.num_queries << " queries)\n";
    for (std::size_t k = 0; k < r.ks.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "    R@%-4zu %8.4f\n", r.ks[k], r.recalls[k]);
      out << buf;
    }
  }
  if (!report.sweep.empty()) {
    out << "\n  alpha     top1  mean_pcc  excluded\n";
    for (const SweepRow& s : report.sweep) {
      std::snprintf(buf, sizeof(buf), "  %5.2f  %7.4f  %8.4f  %8zu\n", s.alpha, s.top1,
                    s.mean_pcc, s.r_excluded);
      out << buf;
    }
  }
  return out.str();
}

}  // namespace capzero
