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

#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedprompt/datagen.hpp"
#include "fedprompt/encoder.hpp"
#include "fedprompt/errors.hpp"
#include "fedprompt/federation.hpp"
#include "fedprompt/metrics.hpp"
#include "fedprompt/prompt_pool.hpp"
#include "fedprompt/training.hpp"
#include "json.hpp"

namespace fedprompt {

struct PromptConfig {
  std::size_t pool_size = 10;      // M
  std::size_t top_n = 3;           // N
  std::size_t prompt_length = 2;   // L_p
  std::size_t irrelevant_length = 2;  // L_c
};

struct AblationConfig {
  bool sort = true;
  bool task_relevant = true;
  bool task_irrelevant = true;
};

struct ExperimentConfig {
  StreamSpec stream;
  std::string dataset_dir;  // optional train.jsonl / test.jsonl instead of synthetic data
  FederationConfig federation;
  TrainConfig train;
  PromptConfig prompts;
  EncoderConfig encoder;
  AblationConfig ablations;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";

  // Upper bound on client-side forward passes a config may request.
  static constexpr double kMaxForwardPasses = 5e7;

  void validate() const {
    stream.validate();
    federation.validate();
    train.validate();
    encoder.validate();
    if (encoder.raw_dim != stream.raw_dim) {
      throw ConfigError("encoder.raw_dim must equal stream.raw_dim");
    }
    if (prompts.top_n < 1 || prompts.top_n > prompts.pool_size) {
      throw ConfigError("prompts need 1 <= N <= M");
    }
    if (prompts.prompt_length < 1) throw ConfigError("prompts.L_p must be >= 1");
    // Each task's training set is spread over the population, so a sampled
    // client sees about task_size / clients samples per epoch.
    const double per_client =
        static_cast<double>(stream.train_per_class * stream.classes_per_task) /
        static_cast<double>(federation.initial_clients);
    const double passes = static_cast<double>(stream.task_count * federation.rounds_per_task *
                                              federation.sampled_per_round * train.local_epochs) *
                          std::max(1.0, per_client);
    if (passes > kMaxForwardPasses) {
      throw ConfigError("config requests about " + std::to_string(passes) +
                        " forward passes, above the desk-scale budget");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON form
// ---------------------------------------------------------------------------

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  return json{
      {"stream",
       {{"task_count", c.stream.task_count},
        {"classes_per_task", c.stream.classes_per_task},
        {"raw_dim", c.stream.raw_dim},
        {"train_per_class", c.stream.train_per_class},
        {"test_per_class", c.stream.test_per_class},
        {"class_separation", c.stream.class_separation},
        {"seed", c.stream.seed},
        {"dataset_dir", c.dataset_dir}}},
      {"federation",
       {{"initial_clients", c.federation.initial_clients},
        {"sampled_per_round", c.federation.sampled_per_round},
        {"rounds_per_task", c.federation.rounds_per_task},
        {"new_clients_per_transition", c.federation.new_clients_per_transition},
        {"s_b_fraction", c.federation.s_b_fraction},
        {"s_o_selectable", c.federation.s_o_selectable},
        {"ownership_fraction", c.federation.ownership_fraction}}},
      {"train",
       {{"lambda", c.train.lambda},
        {"learning_rate", c.train.learning_rate},
        {"local_epochs", c.train.local_epochs},
        {"batch_size", c.train.batch_size},
        {"optimizer", optimizer_name(c.train.optimizer)},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps}}},
      {"prompts",
       {{"M", c.prompts.pool_size},
        {"N", c.prompts.top_n},
        {"L_p", c.prompts.prompt_length},
        {"L_c", c.prompts.irrelevant_length}}},
      {"encoder",
       {{"raw_dim", c.encoder.raw_dim},
        {"token_count", c.encoder.token_count},
        {"embed_dim", c.encoder.embed_dim},
        {"depth", c.encoder.depth},
        {"head_count", c.encoder.head_count},
        {"seed", c.encoder.seed}}},
      {"ablations",
       {{"sort", c.ablations.sort},
        {"task_relevant", c.ablations.task_relevant},
        {"task_irrelevant", c.ablations.task_irrelevant}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known,
                                const std::string& prefix) {
  if (!given.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    if (!known.contains(k)) throw ConfigError("unknown config key '" + prefix + k + "'");
    if (known.at(k).is_object()) {
      if (!v.is_object()) throw ConfigError("config key '" + prefix + k + "' must be an object");
      reject_unknown_keys(v, known.at(k), prefix + k + ".");
    }
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace detail

// Parses a possibly partial config; missing fields keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  nlohmann::json j = to_json(ExperimentConfig{});
  detail::reject_unknown_keys(given, j, "");
  j.merge_patch(given);
  using detail::get_field;
  ExperimentConfig c;
  c.stream.task_count = get_field<std::size_t>(j, "stream", "task_count");
  c.stream.classes_per_task = get_field<std::size_t>(j, "stream", "classes_per_task");
  c.stream.raw_dim = get_field<std::size_t>(j, "stream", "raw_dim");
  c.stream.train_per_class = get_field<std::size_t>(j, "stream", "train_per_class");
  c.stream.test_per_class = get_field<std::size_t>(j, "stream", "test_per_class");
  c.stream.class_separation = get_field<double>(j, "stream", "class_separation");
  c.stream.seed = get_field<std::uint64_t>(j, "stream", "seed");
  c.dataset_dir = get_field<std::string>(j, "stream", "dataset_dir");
  c.federation.initial_clients = get_field<std::size_t>(j, "federation", "initial_clients");
  c.federation.sampled_per_round = get_field<std::size_t>(j, "federation", "sampled_per_round");
  c.federation.rounds_per_task = get_field<std::size_t>(j, "federation", "rounds_per_task");
  c.federation.new_clients_per_transition =
      get_field<std::size_t>(j, "federation", "new_clients_per_transition");
  c.federation.s_b_fraction = get_field<double>(j, "federation", "s_b_fraction");
  c.federation.s_o_selectable = get_field<bool>(j, "federation", "s_o_selectable");
  c.federation.ownership_fraction = get_field<double>(j, "federation", "ownership_fraction");
  c.train.lambda = get_field<double>(j, "train", "lambda");
  c.train.learning_rate = get_field<double>(j, "train", "learning_rate");
  c.train.local_epochs = get_field<std::size_t>(j, "train", "local_epochs");
  c.train.batch_size = get_field<std::size_t>(j, "train", "batch_size");
  const auto opt = get_field<std::string>(j, "train", "optimizer");
  if (opt == "sgd") {
    c.train.optimizer = OptimizerKind::sgd;
  } else if (opt == "adam") {
    c.train.optimizer = OptimizerKind::adam;
  } else {
    throw ConfigError("train.optimizer must be 'sgd' or 'adam', got '" + opt + "'");
  }
  c.train.beta1 = get_field<double>(j, "train", "beta1");
  c.train.beta2 = get_field<double>(j, "train", "beta2");
  c.train.adam_eps = get_field<double>(j, "train", "adam_eps");
  c.prompts.pool_size = get_field<std::size_t>(j, "prompts", "M");
  c.prompts.top_n = get_field<std::size_t>(j, "prompts", "N");
  c.prompts.prompt_length = get_field<std::size_t>(j, "prompts", "L_p");
  c.prompts.irrelevant_length = get_field<std::size_t>(j, "prompts", "L_c");
  c.encoder.raw_dim = get_field<std::size_t>(j, "encoder", "raw_dim");
  c.encoder.token_count = get_field<std::size_t>(j, "encoder", "token_count");
  c.encoder.embed_dim = get_field<std::size_t>(j, "encoder", "embed_dim");
  c.encoder.depth = get_field<std::size_t>(j, "encoder", "depth");
  c.encoder.head_count = get_field<std::size_t>(j, "encoder", "head_count");
  c.encoder.seed = get_field<std::uint64_t>(j, "encoder", "seed");
  c.ablations.sort = get_field<bool>(j, "ablations", "sort");
  c.ablations.task_relevant = get_field<bool>(j, "ablations", "task_relevant");
  c.ablations.task_irrelevant = get_field<bool>(j, "ablations", "task_irrelevant");
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

// Applies a dotted-path override such as ("train.lambda", "0.5"). The value
// is read as JSON when it parses, otherwise as a string.
inline ExperimentConfig apply_override(const ExperimentConfig& c, const std::string& path,
                                       const std::string& value) {
  nlohmann::json j = to_json(c);
  nlohmann::json* node = &j;
  std::string::size_type start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError("unknown override '" + path + "'");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    v = value;
  }
  *node = v;
  return config_from_json(j);
}

// Config as embedded in artifacts: everything except where it was written.
inline nlohmann::json portable_config(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output_dir");
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
  const std::string s = portable_config(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

enum class Method { fcilpt, fedavg_finetune, centralized_joint };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::fcilpt: return "fcilpt";
    case Method::fedavg_finetune: return "fedavg-finetune";
    case Method::centralized_joint: return "centralized-joint";
  }
  return "?";
}

struct RunOptions {
  std::size_t threads = 1;
  bool write_artifacts = true;
  // Prepended to relative output_dir values; defaults to $FEDPROMPT_OUTPUT_ROOT.
  std::optional<std::filesystem::path> output_root;
};

struct RunResult {
  AccuracyMatrix accuracy{1};
  nlohmann::json summary;
  GlobalState final_state;
  std::vector<double> encoder_weights_before;
  std::vector<double> encoder_weights_after;
  std::filesystem::path output_dir;
};

inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c, const RunOptions& o) {
  std::filesystem::path p = c.output_dir;
  if (p.is_absolute()) return p;
  if (o.output_root) return *o.output_root / p;
  if (const char* env = std::getenv("FEDPROMPT_OUTPUT_ROOT"); env && *env) {
    return std::filesystem::path(env) / p;
  }
  return p;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// Task streams from the synthetic generator or from dataset_dir.
inline std::vector<TaskData> load_stream(const ExperimentConfig& c) {
  if (c.dataset_dir.empty()) return generate_stream(c.stream);
  const std::filesystem::path dir = c.dataset_dir;
  auto read = [&dir](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw ConfigError("cannot open " + (dir / name).string());
    return load_jsonl(in);
  };
  const auto train = read("train.jsonl");
  const auto test = read("test.jsonl");
  std::vector<TaskData> tasks(c.stream.task_count);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    tasks[t].task = t;
    for (std::size_t k = 0; k < c.stream.classes_per_task; ++k) {
      tasks[t].classes.push_back(t * c.stream.classes_per_task + k);
    }
  }
  auto place = [&](const Sample& s, bool is_train) {
    if (s.task >= tasks.size() || s.label / c.stream.classes_per_task != s.task) {
      throw ConfigError("dataset sample with label " + std::to_string(s.label) +
                        " does not fit task " + std::to_string(s.task));
    }
    if (s.x.size() != c.stream.raw_dim) throw DimensionError("dataset sample width != raw_dim");
    (is_train ? tasks[s.task].train : tasks[s.task].test).push_back(s);
  };
  for (const auto& s : train) place(s, true);
  for (const auto& s : test) place(s, false);
  return tasks;
}

inline ModelParams initial_params(const ExperimentConfig& c, Method method) {
  ModelParams p;
  const std::size_t d = c.encoder.embed_dim;
  p.pool = init_pool(c.prompts.pool_size, c.prompts.top_n, c.prompts.prompt_length, d,
                     derive_seed(c.seed, {1}));
  const bool use_pc = c.ablations.task_irrelevant && method != Method::fedavg_finetune;
  p.p_c = init_task_irrelevant(use_pc ? c.prompts.irrelevant_length : 0, d,
                               derive_seed(c.seed, {2}));
  p.head = ClassifierHead::init(d, c.stream.total_classes(), derive_seed(c.seed, {3}));
  return p;
}

inline PromptMode prompt_mode(const ExperimentConfig& c, Method method) {
  if (method == Method::fedavg_finetune) return PromptMode::none;
  return c.ablations.task_relevant ? PromptMode::pool : PromptMode::shared_block;
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << s;
}

inline nlohmann::json build_summary(const ExperimentConfig& c, Method method,
                                    const AccuracyMatrix& a, std::size_t phases_done,
                                    const std::string& status) {
  nlohmann::json s;
  std::vector<double> a_t;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 1; t <= phases_done; ++t) {
    a_t.push_back(average_accuracy(a, t));
    rows.push_back(a.row(t));
  }
  s["method"] = method_name(method);
  s["status"] = status;
  s["A"] = a_t;
  s["accuracy_matrix"] = rows;
  if (phases_done == c.stream.task_count) {
    s["avg"] = overall_average(a, phases_done);
    s["final_A"] = a_t.back();
    s["forgetting_gap"] = forgetting_gap(a, phases_done);
  }
  s["config_hash"] = config_hash(c);
  s["seed"] = c.seed;
  s["config"] = portable_config(c);
  return s;
}

inline std::string results_csv(const AccuracyMatrix& a, std::size_t phases_done) {
  std::string out = "phase,task,accuracy\n";
  for (std::size_t t = 1; t <= phases_done; ++t)
    for (std::size_t j = 1; j <= t; ++j)
      out += std::to_string(t) + "," + std::to_string(j) + "," + format_double(a.at(t, j)) + "\n";
  return out;
}

}  // namespace detail

// Full federated run: T tasks x R rounds, evaluation at each phase boundary.
// Writes results.csv, summary.json, transcript.jsonl and checkpoint_task<t>.json.
inline RunResult run_experiment(const ExperimentConfig& config, const RunOptions& opts = {},
                                Method method = Method::fcilpt) {
  config.validate();
  if (method == Method::centralized_joint) {
    throw ContractError("run_experiment: use run_baseline for centralized-joint");
  }
  RunResult res;
  res.accuracy = AccuracyMatrix(config.stream.task_count);
  res.output_dir = resolve_output_dir(config, opts);
  std::ofstream transcript;
  if (opts.write_artifacts) {
    std::filesystem::create_directories(res.output_dir);
    transcript.open(res.output_dir / "transcript.jsonl", std::ios::binary);
  }

  const FrozenEncoder encoder(config.encoder);
  res.encoder_weights_before = encoder.flat_weights();
  const auto stream = load_stream(config);

  GlobalState state;
  state.params = initial_params(config, method);
  ClientRegistry registry = make_registry(config.federation.initial_clients);
  Rng server_rng(derive_seed(config.seed, {0x736572766572}));
  assign_task(registry, stream[0], config.federation.ownership_fraction, server_rng);

  RoundContext ctx;
  ctx.encoder = &encoder;
  ctx.train = config.train;
  ctx.federation = config.federation;
  ctx.mode = prompt_mode(config, method);
  ctx.sort = config.ablations.sort && ctx.mode == PromptMode::pool;
  ctx.classes_per_task = config.stream.classes_per_task;
  ctx.seed = config.seed;
  ctx.threads = opts.threads;
  ctx.transcript = opts.write_artifacts ? &transcript : nullptr;

  std::vector<std::vector<Sample>> tests;
  std::size_t phases_done = 0;
  auto flush = [&](const std::string& status) {
    res.summary = detail::build_summary(config, method, res.accuracy, phases_done, status);
    if (!opts.write_artifacts) return;
    detail::write_text(res.output_dir / "results.csv",
                       detail::results_csv(res.accuracy, phases_done));
    detail::write_text(res.output_dir / "summary.json", res.summary.dump(2) + "\n");
  };
  try {
    for (std::size_t t = 0; t < config.stream.task_count; ++t) {
      if (t > 0) advance_task(state, registry, stream, config.federation, server_rng);
      for (std::size_t r = 0; r < config.federation.rounds_per_task; ++r) {
        run_round(state, registry, ctx, server_rng);
      }
      tests.push_back(stream[t].test);
      res.accuracy.set_row(t + 1, evaluate_global(encoder, state.params, ctx.mode, tests));
      phases_done = t + 1;
      if (opts.write_artifacts) {
        detail::write_text(res.output_dir / ("checkpoint_task" + std::to_string(t + 1) + ".json"),
                           to_json(state).dump() + "\n");
      }
    }
  } catch (const TrainingDivergence&) {
    transcript.flush();
    flush("diverged");
    throw;
  }
  flush("ok");
  res.final_state = std::move(state);
  res.encoder_weights_after = encoder.flat_weights();
  return res;
}

// Reference points around the federated method.
//   fedavg-finetune   - same federation, no prompts, only the head trains
//   centralized-joint - one learner over the union of all tasks seen so far
inline RunResult run_baseline(const ExperimentConfig& config, Method kind,
                              const RunOptions& opts = {}) {
  if (kind == Method::fedavg_finetune) return run_experiment(config, opts, kind);
  if (kind != Method::centralized_joint) throw ContractError("run_baseline: unknown kind");
  config.validate();
  RunResult res;
  res.accuracy = AccuracyMatrix(config.stream.task_count);
  res.output_dir = resolve_output_dir(config, opts);
  if (opts.write_artifacts) std::filesystem::create_directories(res.output_dir);

  const FrozenEncoder encoder(config.encoder);
  res.encoder_weights_before = encoder.flat_weights();
  const auto stream = load_stream(config);
  GlobalState state;
  state.params = initial_params(config, kind);
  const PromptMode mode = prompt_mode(config, kind);
  TrainConfig train = config.train;
  train.local_epochs = config.train.local_epochs * config.federation.rounds_per_task;

  std::vector<Sample> seen;
  std::vector<std::vector<Sample>> tests;
  for (std::size_t t = 0; t < config.stream.task_count; ++t) {
    seen.insert(seen.end(), stream[t].train.begin(), stream[t].train.end());
    const LossContext ctx{&encoder, mode, train.lambda,
                          (t + 1) * config.stream.classes_per_task};
    auto delta = local_update(0, ClientCategory::both, seen, state.params, train, ctx,
                              client_seed(config.seed, t, 0, 0));
    state.params = delta.params;
    reset_frequencies(state.params.pool);
    state.task = t;
    state.round += config.federation.rounds_per_task;
    tests.push_back(stream[t].test);
    res.accuracy.set_row(t + 1, evaluate_global(encoder, state.params, mode, tests));
  }
  res.summary = detail::build_summary(config, kind, res.accuracy, config.stream.task_count, "ok");
  if (opts.write_artifacts) {
    detail::write_text(res.output_dir / "results.csv",
                       detail::results_csv(res.accuracy, config.stream.task_count));
    detail::write_text(res.output_dir / "summary.json", res.summary.dump(2) + "\n");
    detail::write_text(res.output_dir / ("checkpoint_task" +
                                         std::to_string(config.stream.task_count) + ".json"),
                       to_json(state).dump() + "\n");
  }
  res.final_state = std::move(state);
  res.encoder_weights_after = encoder.flat_weights();
  return res;
}

// The six toggle combinations of the component ablation, in table order.
struct AblationVariant {
  std::string name;
  AblationConfig flags;
};

inline std::vector<AblationVariant> ablation_variants() {
  return {{"none", {false, false, false}},
          {"relevant", {false, true, false}},
          {"irrelevant", {false, false, true}},
          {"relevant+irrelevant", {false, true, true}},
          {"sorted+relevant", {true, true, false}},
          {"full", {true, true, true}}};
}

struct AblationRow {
  AblationVariant variant;
  std::vector<double> mean_a_t;  // per phase, averaged over seeds
  double mean_avg = 0.0;
  std::vector<double> final_a_t;  // per seed
};

inline ExperimentConfig with_seed(ExperimentConfig c, std::uint64_t seed) {
  c.seed = seed;
  c.stream.seed = seed;
  c.encoder.seed = seed;
  return c;
}

// Every variant over seeds base.seed .. base.seed + seeds - 1, sharing data and
// encoder per seed. Writes ablation.csv under the base output dir.
inline std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, std::size_t seeds,
                                                   const RunOptions& opts = {}) {
  if (seeds == 0) throw ConfigError("ablation suite needs at least one seed");
  std::vector<AblationRow> rows;
  RunOptions inner = opts;
  inner.write_artifacts = false;
  for (const auto& v : ablation_variants()) {
    AblationRow row;
    row.variant = v;
    row.mean_a_t.assign(base.stream.task_count, 0.0);
    for (std::size_t s = 0; s < seeds; ++s) {
      ExperimentConfig c = with_seed(base, base.seed + s);
      c.ablations = v.flags;
      const auto r = run_experiment(c, inner);
      for (std::size_t t = 1; t <= c.stream.task_count; ++t) {
        row.mean_a_t[t - 1] += average_accuracy(r.accuracy, t) / static_cast<double>(seeds);
      }
      row.mean_avg += overall_average(r.accuracy, c.stream.task_count) /
                      static_cast<double>(seeds);
      row.final_a_t.push_back(average_accuracy(r.accuracy, c.stream.task_count));
    }
    rows.push_back(std::move(row));
  }
  if (opts.write_artifacts) {
    const auto dir = resolve_output_dir(base, opts);
    std::filesystem::create_directories(dir);
    std::string csv = "variant,sorted,task_relevant,task_irrelevant";
    for (std::size_t t = 1; t <= base.stream.task_count; ++t) csv += ",A_" + std::to_string(t);
    csv += ",avg,seeds,config_hash\n";
    for (const auto& r : rows) {
      csv += r.variant.name + "," + (r.variant.flags.sort ? "1" : "0") + "," +
             (r.variant.flags.task_relevant ? "1" : "0") + "," +
             (r.variant.flags.task_irrelevant ? "1" : "0");
      for (double a : r.mean_a_t) csv += "," + format_double(a);
      csv += "," + format_double(r.mean_avg) + "," + std::to_string(seeds) + "," +
             config_hash(base) + "\n";
    }
    detail::write_text(dir / "ablation.csv", csv);
  }
  return rows;
}

}  // namespace fedprompt
