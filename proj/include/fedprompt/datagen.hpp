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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedprompt/errors.hpp"
#include "fedprompt/rng.hpp"
#include "json.hpp"

namespace fedprompt {

struct Sample {
  std::vector<double> x;
  std::size_t label = 0;
  std::size_t task = 0;

  bool operator==(const Sample&) const = default;
  auto operator<=>(const Sample&) const = default;
};

struct StreamSpec {
  std::size_t task_count = 5;
  std::size_t classes_per_task = 4;
  std::size_t raw_dim = 16;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 20;
  double class_separation = 4.0;
  std::uint64_t seed = 1;

  std::size_t total_classes() const { return task_count * classes_per_task; }

  void validate() const {
    if (task_count == 0 || classes_per_task == 0 || raw_dim == 0) {
      throw ConfigError("stream needs positive task_count, classes_per_task, raw_dim");
    }
    if (!(class_separation >= 0.0)) throw ConfigError("class_separation must be >= 0");
  }
};

struct TaskData {
  std::size_t task = 0;
  std::vector<std::size_t> classes;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// One isotropic unit-variance Gaussian per class. Class c belongs to task
// c / classes_per_task; its mean lies uniformly on the sphere of radius
// class_separation.
inline std::vector<TaskData> generate_stream(const StreamSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0x73747265616d}));
  const std::size_t c_total = spec.total_classes();
  std::vector<std::vector<double>> means(c_total, std::vector<double>(spec.raw_dim));
  for (auto& m : means) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : m) {
        v = standard_normal(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : m) v *= spec.class_separation / norm;
  }
  auto draw = [&](std::size_t c) {
    Sample s;
    s.label = c;
    s.task = c / spec.classes_per_task;
    s.x.resize(spec.raw_dim);
    for (std::size_t i = 0; i < spec.raw_dim; ++i) s.x[i] = means[c][i] + standard_normal(rng);
    return s;
  };
  std::vector<TaskData> tasks(spec.task_count);
  for (std::size_t t = 0; t < spec.task_count; ++t) {
    tasks[t].task = t;
    for (std::size_t k = 0; k < spec.classes_per_task; ++k) {
      const std::size_t c = t * spec.classes_per_task + k;
      tasks[t].classes.push_back(c);
      for (std::size_t i = 0; i < spec.train_per_class; ++i) tasks[t].train.push_back(draw(c));
      for (std::size_t i = 0; i < spec.test_per_class; ++i) tasks[t].test.push_back(draw(c));
    }
  }
  return tasks;
}

enum class ClientCategory { old_only, both, fresh };  // S_o, S_b, S_n

inline const char* category_name(ClientCategory c) {
  switch (c) {
    case ClientCategory::old_only: return "S_o";
    case ClientCategory::both: return "S_b";
    case ClientCategory::fresh: return "S_n";
  }
  return "?";
}

struct ClientShard {
  std::size_t client_id = 0;
  std::size_t task = 0;
  std::vector<Sample> samples;
  std::vector<std::size_t> owned_classes;  // ascending
};

inline std::size_t owned_class_count(double fraction, std::size_t classes) {
  // Guard against 0.6 * 10 landing a hair above 6.
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(classes) - 1e-9));
  return std::clamp<std::size_t>(k, 1, classes);
}

struct PartitionMember {
  std::size_t client_id;
  ClientCategory category;
};

// Gives every data-holding client a random ceil(fraction * classes) subset of
// the task's classes, then deals each class's samples round-robin over its
// owners in client-id order. S_o clients get empty shards. Ownership is
// redrawn if some class ends up without an owner.
inline std::vector<ClientShard> partition_task(const TaskData& task,
                                               std::span<const PartitionMember> clients,
                                               double ownership_fraction, Rng& rng,
                                               std::size_t max_retries = 1000) {
  if (!(ownership_fraction > 0.0 && ownership_fraction <= 1.0)) {
    throw ConfigError("ownership_fraction must lie in (0, 1]");
  }
  if (clients.empty()) throw ConfigError("partition_task needs at least one client");
  const std::size_t k = owned_class_count(ownership_fraction, task.classes.size());

  std::vector<ClientShard> shards(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    shards[i].client_id = clients[i].client_id;
    shards[i].task = task.task;
  }
  std::vector<std::size_t> holders;
  for (std::size_t i = 0; i < clients.size(); ++i)
    if (clients[i].category != ClientCategory::old_only) holders.push_back(i);
  if (holders.empty()) throw ConfigError("partition_task: no client can hold data");

  std::map<std::size_t, std::vector<std::size_t>> owners;  // class -> shard indices
  bool covered = false;
  for (std::size_t attempt = 0; attempt < max_retries && !covered; ++attempt) {
    owners.clear();
    for (auto h : holders) {
      auto classes = task.classes;
      shuffle(classes, rng);
      classes.resize(k);
      std::sort(classes.begin(), classes.end());
      shards[h].owned_classes = classes;
      for (auto c : classes) owners[c].push_back(h);
    }
    covered = owners.size() == task.classes.size();
  }
  if (!covered) {
    throw ConfigError("partition_task: some class has no owner after " +
                      std::to_string(max_retries) + " draws");
  }

  std::map<std::size_t, std::size_t> dealt;  // class -> next owner position
  for (const auto& s : task.train) {
    const auto& own = owners.at(s.label);
    auto& next = dealt[s.label];
    shards[own[next % own.size()]].samples.push_back(s);
    ++next;
  }
  return shards;
}

// JSON-lines dataset form: {"x": [...], "y": label, "task": t}.
inline void dump_jsonl(std::ostream& out, std::span<const Sample> samples) {
  for (const auto& s : samples) {
    out << nlohmann::json{{"x", s.x}, {"y", s.label}, {"task", s.task}}.dump() << '\n';
  }
}

inline std::vector<Sample> load_jsonl(std::istream& in) {
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s;
      s.x = j.at("x").get<std::vector<double>>();
      s.label = j.at("y").get<std::size_t>();
      s.task = j.at("task").get<std::size_t>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fedprompt
