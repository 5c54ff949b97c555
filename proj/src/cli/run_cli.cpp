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


#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "capzero/cli.hpp"
#include "capzero/errors.hpp"

namespace capzero {
namespace {

struct Flags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> out, seed, workers;
  std::optional<std::string> steps, beta, gamma, lr, batch_size;
  std::optional<std::string> objective, grid, prior;
  bool no_cache = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config_path, "INI config file");
  cmd->add_option("--set", f.sets, "Override as section.key=value (repeatable)");
  cmd->add_option("-o,--out", f.out, "Output directory (run.output_dir)");
  cmd->add_option("--seed", f.seed, "Global seed (run.seed)");
  cmd->add_option("--workers", f.workers, "Scoring threads (run.workers)");
  cmd->add_flag("-q,--quiet", f.quiet, "Only print errors");
}

// Defaults, then the file, then --set, then dedicated flags.
RunConfig build_config(const Flags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : RunConfig::load(f.config_path);
  for (const auto& s : f.sets) c.set(s);
  auto apply = [&c](const char* section, const char* key, const std::optional<std::string>& v) {
    if (v) c.set(section, key, *v);
  };
  apply("run", "output_dir", f.out);
  apply("run", "seed", f.seed);
  apply("run", "workers", f.workers);
  apply("train", "steps", f.steps);
  apply("train", "beta", f.beta);
  apply("train", "gamma", f.gamma);
  apply("train", "peak_lr", f.lr);
  apply("train", "batch_size", f.batch_size);
  apply("eval", "objective", f.objective);
  apply("eval", "grid", f.grid);
  apply("eval", "sweep_prior", f.prior);
  if (f.no_cache) c.eval.reuse_cache = false;
  return c;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"capzero: captioner training and zero-shot evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus and prompt table");
  add_common(gen, f);

  auto* trn = app.add_subcommand("train", "Train a captioner on the generated corpus");
  add_common(trn, f);
  trn->add_option("--steps", f.steps, "train.steps");
  trn->add_option("--beta", f.beta, "train.beta (multimodal weight)");
  trn->add_option("--gamma", f.gamma, "train.gamma (unimodal weight)");
  trn->add_option("--lr", f.lr, "train.peak_lr");
  trn->add_option("--batch-size", f.batch_size, "train.batch_size");

  auto* ev = app.add_subcommand("eval", "Score, classify and report");
  add_common(ev, f);
  ev->add_option("--objective", f.objective, "mle | ig:A | zero_image:A | lm_plus_cap[:A]");
  ev->add_flag("--no-cache", f.no_cache, "Ignore cached score files");

  auto* sw = app.add_subcommand("sweep", "Accuracy and PCC over an alpha grid");
  add_common(sw, f);
  sw->add_option("--grid", f.grid, "Comma-separated alphas");
  sw->add_option("--prior", f.prior, "unimodal_mode | zero_image | external_lm");
  sw->add_flag("--no-cache", f.no_cache, "Ignore cached score files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig config = build_config(f);
    std::ostream* log = f.quiet ? nullptr : &std::cout;
    if (gen->parsed()) {
      cmd_gen(config, log);
    } else if (trn->parsed()) {
      cmd_train(config, log);
    } else if (ev->parsed()) {
      cmd_eval(config, log);
    } else {
      cmd_sweep(config, log);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace capzero
