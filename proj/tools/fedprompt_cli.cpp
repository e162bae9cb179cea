/*
 * Copyright 2026 The fedprompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


// fedprompt command line: run, ablate, baseline, verify, dump-data.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedprompt/experiment.hpp"
#include "fedprompt/verify.hpp"

namespace fp = fedprompt;

namespace {

// Leftover "--a.b value" / "--a.b=value" pairs become dotted-path overrides.
fp::ExperimentConfig apply_overrides(fp::ExperimentConfig c, std::vector<std::string> extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0) throw fp::ConfigError("unexpected argument '" + key + "'");
    key = key.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw fp::ConfigError("override --" + key + " needs a value");
      value = extras[++i];
    }
    c = fp::apply_override(c, key, value);
  }
  return c;
}

fp::ExperimentConfig load(const std::string& path) {
  return path.empty() ? fp::ExperimentConfig{} : fp::load_config(path);
}

void print_summary(const fp::RunResult& r) {
  const auto& s = r.summary;
  std::printf("%s: final A_T %.4f  Avg %.4f  forgetting %.4f\n",
              s.at("method").get<std::string>().c_str(), s.at("final_A").get<double>(),
              s.at("avg").get<double>(), s.at("forgetting_gap").get<double>());
  if (!r.output_dir.empty()) std::printf("artifacts in %s\n", r.output_dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated class-incremental learning with prompt pools"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "client updates run in parallel on this many threads")
      ->check(CLI::PositiveNumber);
  std::string out_root;
  app.add_option("--output-root", out_root,
                 "prefix for relative output_dir values (default $FEDPROMPT_OUTPUT_ROOT)");

  std::string config_path;
  auto* run = app.add_subcommand("run", "train and evaluate FCILPT on one config");
  run->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  bool no_sort = false, no_relevant = false, no_irrelevant = false;
  run->add_flag("--no-sort", no_sort, "aggregate pools without frequency sorting");
  run->add_flag("--no-task-relevant", no_relevant, "replace the pool with one shared block");
  run->add_flag("--no-task-irrelevant", no_irrelevant, "drop the task-irrelevant prompt");
  run->allow_extras();

  auto* ablate = app.add_subcommand("ablate", "the six component toggles over several seeds");
  ablate->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  std::size_t seeds = 5;
  ablate->add_option("--seeds", seeds, "seeds config.seed .. config.seed + k - 1")
      ->check(CLI::PositiveNumber);
  ablate->allow_extras();

  auto* baseline = app.add_subcommand("baseline", "reference runs without the prompt method");
  baseline->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  std::string kind;
  baseline->add_option("--kind", kind, "centralized-joint or fedavg-finetune")
      ->required()
      ->check(CLI::IsMember({"centralized-joint", "fedavg-finetune"}));
  baseline->allow_extras();

  auto* verify = app.add_subcommand("verify", "run the oracle and invariant checks");
  bool with_trend = false;
  verify->add_flag("--trend", with_trend, "also run the 5-seed forgetting trend (minutes)");
  std::string scratch = (std::filesystem::temp_directory_path() / "fedprompt_verify").string();
  verify->add_option("--scratch", scratch, "directory for temporary run artifacts");

  auto* dump = app.add_subcommand("dump-data", "write the synthetic stream as JSON lines");
  dump->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  std::string dump_dir;
  dump->add_option("--out", dump_dir, "output directory")->required();
  dump->allow_extras();

  CLI11_PARSE(app, argc, argv);

  fp::RunOptions opts;
  opts.threads = threads;
  if (!out_root.empty()) opts.output_root = out_root;

  try {
    if (*run) {
      auto c = apply_overrides(load(config_path), run->remaining());
      if (no_sort) c.ablations.sort = false;
      if (no_relevant) c.ablations.task_relevant = false;
      if (no_irrelevant) c.ablations.task_irrelevant = false;
      print_summary(fp::run_experiment(c, opts));
    } else if (*ablate) {
      const auto c = apply_overrides(load(config_path), ablate->remaining());
      const auto rows = fp::run_ablation_suite(c, seeds, opts);
      std::printf("%-22s %8s %8s\n", "variant", "final_A", "avg");
      for (const auto& r : rows) {
        double final_a = 0.0;
        for (double a : r.final_a_t) final_a += a / static_cast<double>(r.final_a_t.size());
        std::printf("%-22s %8.4f %8.4f\n", r.variant.name.c_str(), final_a, r.mean_avg);
      }
    } else if (*baseline) {
      const auto c = apply_overrides(load(config_path), baseline->remaining());
      const auto m = kind == "centralized-joint" ? fp::Method::centralized_joint
                                                 : fp::Method::fedavg_finetune;
      print_summary(fp::run_baseline(c, m, opts));
    } else if (*verify) {
      namespace v = fp::verify;
      std::vector<v::CheckResult> results = {
          v::check_gradients(),    v::check_top_n(),     v::check_sort_aggregate(),
          v::check_frozen_backbone(), v::check_metrics(), v::check_partition(),
          v::check_determinism(scratch), v::check_replay(scratch)};
      if (with_trend) {
        const std::uint64_t s[] = {1, 2, 3, 4, 5};
        results.push_back(v::check_trend(s, threads));
      }
      bool ok = true;
      for (const auto& r : results) {
        std::printf("%s  %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str(), r.seconds);
        ok = ok && r.pass;
      }
      return ok ? 0 : 1;
    } else if (*dump) {
      const auto c = apply_overrides(load(config_path), dump->remaining());
      const auto stream = fp::generate_stream(c.stream);
      std::filesystem::create_directories(dump_dir);
      std::ofstream train(std::filesystem::path(dump_dir) / "train.jsonl");
      std::ofstream test(std::filesystem::path(dump_dir) / "test.jsonl");
      for (const auto& t : stream) {
        fp::dump_jsonl(train, t.train);
        fp::dump_jsonl(test, t.test);
      }
      std::printf("wrote %zu tasks to %s\n", stream.size(), dump_dir.c_str());
    }
  } catch (const fp::TrainingDivergence& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return 3;
  } catch (const fp::ConfigError& e) {
    std::fprintf(stderr, "error: invalid config: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
