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
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedprompt/errors.hpp"
#include "fedprompt/rng.hpp"
#include "fedprompt/tensor.hpp"
#include "json.hpp"

namespace fedprompt {

// M learnable (key, value) prompt pairs with per-key selection counters.
//
// No slot is tied to a task; which prompts end up task-specific or shared
// between similar tasks follows from the instance-wise query alone.
struct PromptPool {
  std::size_t size = 0;           // M
  std::size_t top_n = 0;          // N
  std::size_t prompt_length = 0;  // L_p
  std::size_t embed_dim = 0;      // D
  std::vector<std::vector<double>> keys;    // M x D
  std::vector<std::vector<double>> values;  // M x (L_p * D), row-major tokens
  std::vector<std::uint64_t> freq;          // M

  bool same_shape(const PromptPool& o) const {
    return size == o.size && top_n == o.top_n && prompt_length == o.prompt_length &&
           embed_dim == o.embed_dim && keys.size() == o.keys.size() &&
           values.size() == o.values.size();
  }
};

// Always-prepended prompt shared by all tasks; length 0 switches it off.
struct TaskIrrelevantPrompt {
  std::size_t length = 0;  // L_c
  std::size_t embed_dim = 0;
  std::vector<double> tokens;  // L_c x D

  Tensor as_constant() const {
    return length == 0 ? Tensor{} : Tensor::constant({length, embed_dim}, tokens);
  }
  Tensor as_parameter() const {
    return length == 0 ? Tensor{} : Tensor::parameter({length, embed_dim}, tokens);
  }
};

struct Selection {
  std::vector<std::size_t> indices;  // ascending
  double match_loss = 0.0;           // sum of selected key distances
};

inline PromptPool init_pool(std::size_t m, std::size_t n, std::size_t prompt_length,
                            std::size_t embed_dim, std::uint64_t seed) {
  if (n < 1 || n > m) {
    throw ConfigError("prompt pool needs 1 <= N <= M, got N=" + std::to_string(n) +
                      " M=" + std::to_string(m));
  }
  if (prompt_length == 0 || embed_dim == 0) {
    throw ConfigError("prompt pool needs positive L_p and D");
  }
  PromptPool pool;
  pool.size = m;
  pool.top_n = n;
  pool.prompt_length = prompt_length;
  pool.embed_dim = embed_dim;
  Rng rng(derive_seed(seed, {0x706f6f6c}));
  const double a = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  pool.keys.assign(m, std::vector<double>(embed_dim));
  for (auto& k : pool.keys) {
    // Redraw the (measure-zero) all-zero key so cosine distance stays defined.
    do {
      for (auto& v : k) v = uniform(rng, -a, a);
    } while (std::all_of(k.begin(), k.end(), [](double v) { return v == 0.0; }));
  }
  pool.values.assign(m, std::vector<double>(prompt_length * embed_dim));
  for (auto& p : pool.values)
    for (auto& v : p) v = uniform(rng, -a, a);
  pool.freq.assign(m, 0);
  return pool;
}

inline TaskIrrelevantPrompt init_task_irrelevant(std::size_t length, std::size_t embed_dim,
                                                 std::uint64_t seed) {
  TaskIrrelevantPrompt p;
  p.length = length;
  p.embed_dim = embed_dim;
  Rng rng(derive_seed(seed, {0x7063}));
  const double a = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  p.tokens.resize(length * embed_dim);
  for (auto& v : p.tokens) v = uniform(rng, -a, a);
  return p;
}

inline double cosine_distance_value(std::span<const double> u, std::span<const double> v) {
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 && vv == 0.0) throw DegenerateInputError("cosine distance of zero vectors");
  if (uu == 0.0 || vv == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(uu) * std::sqrt(vv));
}

inline std::vector<double> key_distances(const PromptPool& pool, std::span<const double> q) {
  if (q.size() != pool.embed_dim) {
    throw DimensionError("query has " + std::to_string(q.size()) +
                         " values, pool keys have " + std::to_string(pool.embed_dim));
  }
  if (std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; })) {
    throw DegenerateInputError("zero query vector");
  }
  std::vector<double> d(pool.size);
  for (std::size_t i = 0; i < pool.size; ++i) d[i] = cosine_distance_value(q, pool.keys[i]);
  return d;
}

// The N keys closest to q, without touching the frequency counters.
// Summed distance over a size-N subset is minimized by the N smallest terms;
// ties go to the lower index.
inline Selection rank_top_n(const PromptPool& pool, std::span<const double> q) {
  const auto d = key_distances(pool, q);
  std::vector<std::size_t> order(pool.size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&d](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  Selection sel;
  sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool.top_n));
  std::sort(sel.indices.begin(), sel.indices.end());
  for (auto i : sel.indices) sel.match_loss += d[i];
  return sel;
}

// rank_top_n plus one count per selected key.
inline Selection select_top_n(PromptPool& pool, std::span<const double> q) {
  Selection sel = rank_top_n(pool, q);
  for (auto i : sel.indices) ++pool.freq[i];
  return sel;
}

inline void reset_frequencies(PromptPool& pool) {
  std::fill(pool.freq.begin(), pool.freq.end(), 0);
}

// [selected values (ascending slot); task-irrelevant prompt; embedded tokens].
// slot_values[i] must be defined for every selected i; an undefined p_c is
// skipped.
inline Tensor prepend(const Selection& sel, std::span<const Tensor> slot_values,
                      const Tensor& p_c, const Tensor& embedded) {
  std::vector<Tensor> parts;
  parts.reserve(sel.indices.size() + 2);
  const std::size_t d = embedded.cols();
  for (auto i : sel.indices) {
    if (i >= slot_values.size() || !slot_values[i].defined()) {
      throw ContractError("prepend: no value tensor for slot " + std::to_string(i));
    }
    if (slot_values[i].cols() != d) throw DimensionError("prepend: prompt width mismatch");
    parts.push_back(slot_values[i]);
  }
  if (p_c.defined()) {
    if (p_c.cols() != d) throw DimensionError("prepend: task-irrelevant width mismatch");
    parts.push_back(p_c);
  }
  parts.push_back(embedded);
  return concat_rows(parts);
}

// Constant-valued convenience overload used for evaluation.
inline Tensor prepend(const Selection& sel, const PromptPool& pool,
                      const TaskIrrelevantPrompt& p_c, const Tensor& embedded) {
  std::vector<Tensor> slots(pool.size);
  for (auto i : sel.indices) {
    if (i >= pool.size) throw IndexError("selection index out of range");
    slots[i] = Tensor::constant({pool.prompt_length, pool.embed_dim}, pool.values[i]);
  }
  return prepend(sel, slots, p_c.as_constant(), embedded);
}

inline nlohmann::json to_json(const PromptPool& pool) {
  nlohmann::json values = nlohmann::json::array();
  for (const auto& v : pool.values) {
    nlohmann::json tokens = nlohmann::json::array();
    for (std::size_t t = 0; t < pool.prompt_length; ++t) {
      tokens.push_back(std::vector<double>(
          v.begin() + static_cast<std::ptrdiff_t>(t * pool.embed_dim),
          v.begin() + static_cast<std::ptrdiff_t>((t + 1) * pool.embed_dim)));
    }
    values.push_back(std::move(tokens));
  }
  return {{"keys", pool.keys},
          {"values", std::move(values)},
          {"freq", pool.freq},
          {"meta",
           {{"M", pool.size}, {"N", pool.top_n}, {"L_p", pool.prompt_length},
            {"D", pool.embed_dim}}}};
}

inline PromptPool pool_from_json(const nlohmann::json& j) {
  PromptPool pool;
  const auto& meta = j.at("meta");
  pool.size = meta.at("M").get<std::size_t>();
  pool.top_n = meta.at("N").get<std::size_t>();
  pool.prompt_length = meta.at("L_p").get<std::size_t>();
  pool.embed_dim = meta.at("D").get<std::size_t>();
  pool.keys = j.at("keys").get<std::vector<std::vector<double>>>();
  pool.freq = j.at("freq").get<std::vector<std::uint64_t>>();
  for (const auto& v : j.at("values")) {
    std::vector<double> flat;
    for (const auto& tok : v) {
      const auto row = tok.get<std::vector<double>>();
      flat.insert(flat.end(), row.begin(), row.end());
    }
    pool.values.push_back(std::move(flat));
  }
  if (pool.keys.size() != pool.size || pool.values.size() != pool.size ||
      pool.freq.size() != pool.size) {
    throw DimensionError("pool json: slot count disagrees with meta.M");
  }
  for (std::size_t i = 0; i < pool.size; ++i) {
    if (pool.keys[i].size() != pool.embed_dim ||
        pool.values[i].size() != pool.prompt_length * pool.embed_dim) {
      throw DimensionError("pool json: slot " + std::to_string(i) + " has the wrong width");
    }
  }
  return pool;
}

}  // namespace fedprompt
