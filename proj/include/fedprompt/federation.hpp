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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <exception>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedprompt/datagen.hpp"
#include "fedprompt/encoder.hpp"
#include "fedprompt/errors.hpp"
#include "fedprompt/prompt_pool.hpp"
#include "fedprompt/rng.hpp"
#include "fedprompt/training.hpp"
#include "json.hpp"

namespace fedprompt {

struct FederationConfig {
  std::size_t initial_clients = 10;
  std::size_t sampled_per_round = 5;  // H
  std::size_t rounds_per_task = 5;    // R
  std::size_t new_clients_per_transition = 2;
  double s_b_fraction = 0.9;
  bool s_o_selectable = true;
  double ownership_fraction = 0.6;

  void validate() const {
    if (initial_clients == 0) throw ConfigError("federation.initial_clients must be >= 1");
    if (sampled_per_round == 0) throw ConfigError("federation.sampled_per_round must be >= 1");
    if (sampled_per_round > initial_clients) {
      throw ConfigError("federation.sampled_per_round exceeds initial_clients");
    }
    if (rounds_per_task == 0) throw ConfigError("federation.rounds_per_task must be >= 1");
    if (!(s_b_fraction >= 0.0 && s_b_fraction <= 1.0)) {
      throw ConfigError("federation.s_b_fraction must lie in [0, 1]");
    }
    if (!(ownership_fraction > 0.0 && ownership_fraction <= 1.0)) {
      throw ConfigError("federation.ownership_fraction must lie in (0, 1]");
    }
  }
};

struct GlobalState {
  ModelParams params;
  std::size_t round = 0;  // rounds completed over the whole run
  std::size_t task = 0;   // 0-based current task
};

struct ClientState {
  std::size_t id = 0;
  ClientCategory category = ClientCategory::fresh;
  ClientShard shard;
};

struct ClientRegistry {
  std::vector<ClientState> clients;  // clients[i].id == i
  std::vector<std::vector<ClientCategory>> categories;  // per task, per client id

  std::size_t size() const { return clients.size(); }
};

// ---------------------------------------------------------------------------
// Parameter checksums (FNV-1a over the raw bytes of each double)
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(std::span<const double> values,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::json param_checksums(const ModelParams& p) {
  std::uint64_t keys = 0xcbf29ce484222325ULL, values = keys;
  for (const auto& k : p.pool.keys) keys = fnv1a(k, keys);
  for (const auto& v : p.pool.values) values = fnv1a(v, values);
  std::uint64_t head = fnv1a(p.head.weight);
  head = fnv1a(p.head.bias, head);
  return {{"keys", hex64(keys)},
          {"values", hex64(values)},
          {"p_c", hex64(fnv1a(p.p_c.tokens))},
          {"head", hex64(head)}};
}

// ---------------------------------------------------------------------------
// Server-side operations
// ---------------------------------------------------------------------------

// Uniform draw of H distinct client ids, returned ascending.
inline std::vector<std::size_t> sample_clients(const ClientRegistry& registry, std::size_t h,
                                               Rng& rng, bool s_o_selectable = true) {
  std::vector<std::size_t> eligible;
  for (const auto& c : registry.clients) {
    if (s_o_selectable || c.category != ClientCategory::old_only) eligible.push_back(c.id);
  }
  if (h > eligible.size()) {
    throw ConfigError("cannot sample " + std::to_string(h) + " clients from " +
                      std::to_string(eligible.size()) + " eligible");
  }
  for (std::size_t i = 0; i < h; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(h);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

// Slot order by descending frequency, ties by ascending slot.
inline std::vector<std::size_t> frequency_order(std::span<const std::uint64_t> freq) {
  std::vector<std::size_t> order(freq.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&freq](std::size_t a, std::size_t b) { return freq[a] > freq[b]; });
  return order;
}

// New slot i holds old slot order[i]; keys, values and counters move together.
inline void permute_pool(PromptPool& pool, std::span<const std::size_t> order) {
  if (order.size() != pool.size) throw DimensionError("permutation size != pool size");
  PromptPool out = pool;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.keys[i] = pool.keys[order[i]];
    out.values[i] = pool.values[order[i]];
    out.freq[i] = pool.freq[order[i]];
  }
  pool = std::move(out);
}

inline LocalDelta sort_pool(LocalDelta delta) {
  const auto order = frequency_order(delta.params.pool.freq);
  permute_pool(delta.params.pool, order);
  return delta;
}

// Coordinate-wise mean over the deltas, accumulated in client-id order so the
// result does not depend on the order of the input list.
inline ModelParams aggregate(std::span<const LocalDelta> deltas) {
  if (deltas.empty()) throw ProtocolError("aggregate over no clients");
  std::vector<const LocalDelta*> ordered;
  for (const auto& d : deltas) ordered.push_back(&d);
  std::stable_sort(ordered.begin(), ordered.end(), [](const LocalDelta* a, const LocalDelta* b) {
    return a->client_id < b->client_id;
  });
  const ModelParams& first = ordered.front()->params;
  for (const auto* d : ordered) {
    if (!d->params.same_shape(first)) throw ProtocolError("aggregate: client shapes differ");
    for (std::size_t i = 0; i < first.pool.size; ++i) {
      if (d->params.pool.keys[i].size() != first.pool.keys[i].size() ||
          d->params.pool.values[i].size() != first.pool.values[i].size()) {
        throw ProtocolError("aggregate: slot width differs");
      }
    }
  }
  // Running mean m_k = m_{k-1} + (x_k - m_{k-1}) / k: identical uploads
  // average back to themselves bit for bit.
  auto mean_into = [&](std::vector<double>& out, auto&& get) {
    std::size_t k = 0;
    for (const auto* d : ordered) {
      const std::vector<double>& src = get(d->params);
      ++k;
      if (k == 1) {
        out = src;
        continue;
      }
      const double kd = static_cast<double>(k);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += (src[i] - out[i]) / kd;
    }
  };
  ModelParams g = first;
  for (std::size_t i = 0; i < g.pool.size; ++i) {
    mean_into(g.pool.keys[i], [i](const ModelParams& p) -> const std::vector<double>& {
      return p.pool.keys[i];
    });
    mean_into(g.pool.values[i], [i](const ModelParams& p) -> const std::vector<double>& {
      return p.pool.values[i];
    });
  }
  mean_into(g.p_c.tokens, [](const ModelParams& p) -> const std::vector<double>& {
    return p.p_c.tokens;
  });
  mean_into(g.head.weight, [](const ModelParams& p) -> const std::vector<double>& {
    return p.head.weight;
  });
  mean_into(g.head.bias, [](const ModelParams& p) -> const std::vector<double>& {
    return p.head.bias;
  });
  reset_frequencies(g.pool);
  return g;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers and rethrows the
// first failure after all workers have joined.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct RoundContext {
  const FrozenEncoder* encoder = nullptr;
  TrainConfig train;
  FederationConfig federation;
  PromptMode mode = PromptMode::pool;
  bool sort = true;
  std::size_t classes_per_task = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::ostream* transcript = nullptr;  // JSON lines, optional
};

inline std::uint64_t client_seed(std::uint64_t seed, std::size_t task, std::size_t round,
                                 std::size_t client) {
  return derive_seed(seed, {0x6c6f63616c, task, round, client});
}

struct RoundRecord {
  std::vector<std::size_t> sampled;
  std::vector<LocalDelta> uploads;  // after sorting, in sampled order
  std::vector<std::vector<std::size_t>> permutations;
};

// One server round: sample, train the sampled clients in parallel, align each
// pool by selection frequency, average, advance the round counter.
inline RoundRecord run_round(GlobalState& state, const ClientRegistry& registry,
                             const RoundContext& ctx, Rng& rng) {
  if (ctx.encoder == nullptr) throw ContractError("run_round without an encoder");
  RoundRecord rec;
  rec.sampled = sample_clients(registry, ctx.federation.sampled_per_round, rng,
                               ctx.federation.s_o_selectable);
  LossContext loss_ctx{ctx.encoder, ctx.mode, ctx.train.lambda,
                       (state.task + 1) * ctx.classes_per_task};
  std::vector<LocalDelta> trained(rec.sampled.size());
  parallel_for(rec.sampled.size(), ctx.threads, [&](std::size_t i) {
    const ClientState& c = registry.clients.at(rec.sampled[i]);
    trained[i] = local_update(c.id, c.category, c.shard.samples, state.params, ctx.train,
                              loss_ctx, client_seed(ctx.seed, state.task, state.round, c.id));
  });

  rec.uploads.reserve(trained.size());
  for (std::size_t i = 0; i < trained.size(); ++i) {
    std::vector<std::size_t> order(trained[i].params.pool.size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (ctx.sort) order = frequency_order(trained[i].params.pool.freq);
    LocalDelta up = trained[i];
    permute_pool(up.params.pool, order);
    if (ctx.transcript) {
      const auto& c = registry.clients[rec.sampled[i]];
      nlohmann::json j = {{"event", "client_update"},
                          {"task", state.task},
                          {"round", state.round},
                          {"client", c.id},
                          {"category", category_name(c.category)},
                          {"samples", up.sample_count},
                          {"freq", trained[i].params.pool.freq},
                          {"permutation", order},
                          {"trained", param_checksums(trained[i].params)},
                          {"upload", param_checksums(up.params)}};
      *ctx.transcript << j.dump() << '\n';
    }
    rec.permutations.push_back(std::move(order));
    rec.uploads.push_back(std::move(up));
  }

  state.params = aggregate(rec.uploads);
  if (ctx.transcript) {
    nlohmann::json j = {{"event", "aggregate"},
                        {"task", state.task},
                        {"round", state.round},
                        {"clients", rec.sampled},
                        {"global", param_checksums(state.params)}};
    *ctx.transcript << j.dump() << '\n';
  }
  ++state.round;
  return rec;
}

inline ClientRegistry make_registry(std::size_t initial_clients) {
  ClientRegistry reg;
  for (std::size_t i = 0; i < initial_clients; ++i) {
    reg.clients.push_back({i, ClientCategory::fresh, {}});
  }
  return reg;
}

// Deals the task's training data over the current population.
inline void assign_task(ClientRegistry& registry, const TaskData& task, double ownership_fraction,
                        Rng& rng) {
  std::vector<PartitionMember> members;
  for (const auto& c : registry.clients) members.push_back({c.id, c.category});
  auto shards = partition_task(task, members, ownership_fraction, rng);
  for (std::size_t i = 0; i < shards.size(); ++i) registry.clients[i].shard = std::move(shards[i]);
  std::vector<ClientCategory> cats;
  for (const auto& c : registry.clients) cats.push_back(c.category);
  if (registry.categories.size() <= task.task) registry.categories.resize(task.task + 1);
  registry.categories[task.task] = std::move(cats);
}

// Task transition: new clients join as S_n, existing clients are split into
// S_b / S_o, and the next task's data is dealt out. Returns false once the
// stream is exhausted.
inline bool advance_task(GlobalState& state, ClientRegistry& registry,
                         std::span<const TaskData> stream, const FederationConfig& cfg,
                         Rng& rng) {
  if (state.task + 1 >= stream.size()) return false;
  ++state.task;
  const std::size_t existing = registry.size();
  const auto old_only = static_cast<std::size_t>(
      std::llround((1.0 - cfg.s_b_fraction) * static_cast<double>(existing)));
  std::vector<std::size_t> ids(existing);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  shuffle(ids, rng);
  for (std::size_t i = 0; i < existing; ++i) {
    registry.clients[ids[i]].category = i < old_only ? ClientCategory::old_only
                                                     : ClientCategory::both;
  }
  for (std::size_t i = 0; i < cfg.new_clients_per_transition; ++i) {
    registry.clients.push_back({existing + i, ClientCategory::fresh, {}});
  }
  assign_task(registry, stream[state.task], cfg.ownership_fraction, rng);
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const GlobalState& s) {
  return {{"pool", to_json(s.params.pool)},
          {"p_c", {{"L_c", s.params.p_c.length}, {"D", s.params.p_c.embed_dim},
                   {"tokens", s.params.p_c.tokens}}},
          {"head", {{"D", s.params.head.embed_dim}, {"classes", s.params.head.class_count},
                    {"weight", s.params.head.weight}, {"bias", s.params.head.bias}}},
          {"round", s.round},
          {"task", s.task}};
}

inline GlobalState global_state_from_json(const nlohmann::json& j) {
  GlobalState s;
  s.params.pool = pool_from_json(j.at("pool"));
  const auto& pc = j.at("p_c");
  s.params.p_c.length = pc.at("L_c").get<std::size_t>();
  s.params.p_c.embed_dim = pc.at("D").get<std::size_t>();
  s.params.p_c.tokens = pc.at("tokens").get<std::vector<double>>();
  const auto& h = j.at("head");
  s.params.head.embed_dim = h.at("D").get<std::size_t>();
  s.params.head.class_count = h.at("classes").get<std::size_t>();
  s.params.head.weight = h.at("weight").get<std::vector<double>>();
  s.params.head.bias = h.at("bias").get<std::vector<double>>();
  s.round = j.at("round").get<std::size_t>();
  s.task = j.at("task").get<std::size_t>();
  if (s.params.p_c.tokens.size() != s.params.p_c.length * s.params.p_c.embed_dim ||
      s.params.head.weight.size() != s.params.head.embed_dim * s.params.head.class_count ||
      s.params.head.bias.size() != s.params.head.class_count) {
    throw DimensionError("checkpoint: tensor sizes disagree with declared shapes");
  }
  return s;
}

}  // namespace fedprompt
