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

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedprompt/datagen.hpp"
#include "fedprompt/encoder.hpp"
#include "fedprompt/errors.hpp"
#include "fedprompt/prompt_pool.hpp"
#include "fedprompt/rng.hpp"
#include "fedprompt/tensor.hpp"

namespace fedprompt {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double lambda = 1.0;
  double learning_rate = 0.03;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0");
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
    if (local_epochs < 1) throw ConfigError("train.local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
  }
};

// How prompts enter the forward pass.
//   pool         - instance-wise top-N query over the key/value pool
//   shared_block - every pool value prepended to every sample, no keys
//   none         - no pool prompts at all
enum class PromptMode { pool, shared_block, none };

// Everything the server distributes and averages.
struct ModelParams {
  PromptPool pool;
  TaskIrrelevantPrompt p_c;
  ClassifierHead head;

  bool same_shape(const ModelParams& o) const {
    return pool.same_shape(o.pool) && p_c.length == o.p_c.length &&
           p_c.embed_dim == o.p_c.embed_dim && p_c.tokens.size() == o.p_c.tokens.size() &&
           head.embed_dim == o.head.embed_dim && head.class_count == o.head.class_count &&
           head.weight.size() == o.head.weight.size() && head.bias.size() == o.head.bias.size();
  }
};

// What a client sends back after LocalUpdate. Frequencies live in
// params.pool.freq.
struct LocalDelta {
  std::size_t client_id = 0;
  ModelParams params;
  std::size_t sample_count = 0;
  std::vector<double> epoch_losses;  // mean batch loss per local epoch
};

// Parameter leaves for a single optimizer step, created on first use so that
// only the slots a batch actually touches enter the graph.
class StepLeaves {
 public:
  StepLeaves(const ModelParams& params, PromptMode mode)
      : params_(&params),
        mode_(mode),
        keys_(params.pool.size),
        values_(params.pool.size),
        p_c_(params.p_c.as_parameter()),
        head_(HeadTensors::parameters(params.head)) {}

  const Tensor& key(std::size_t i) {
    if (!keys_[i].defined()) {
      keys_[i] = Tensor::parameter({params_->pool.embed_dim}, params_->pool.keys[i]);
    }
    return keys_[i];
  }
  const Tensor& value(std::size_t i) {
    if (!values_[i].defined()) {
      values_[i] = Tensor::parameter({params_->pool.prompt_length, params_->pool.embed_dim},
                                     params_->pool.values[i]);
    }
    return values_[i];
  }
  std::span<const Tensor> values() const { return values_; }
  const Tensor& p_c() const { return p_c_; }
  const HeadTensors& head() const { return head_; }
  PromptMode mode() const { return mode_; }

  const std::vector<Tensor>& key_leaves() const { return keys_; }
  const std::vector<Tensor>& value_leaves() const { return values_; }

 private:
  const ModelParams* params_;
  PromptMode mode_;
  std::vector<Tensor> keys_;
  std::vector<Tensor> values_;
  Tensor p_c_;
  HeadTensors head_;
};

struct LossContext {
  const FrozenEncoder* encoder = nullptr;
  PromptMode mode = PromptMode::pool;
  double lambda = 1.0;
  // Logits outside [first_visible_class, visible_classes) get -1e9.
  std::size_t visible_classes = 0;
  std::size_t first_visible_class = 0;
};

inline constexpr double kMaskedLogit = -1e9;

inline Tensor logit_mask(std::size_t class_count, std::size_t visible, std::size_t first = 0) {
  std::vector<double> m(class_count, 0.0);
  for (std::size_t c = 0; c < class_count; ++c)
    if (c < first || c >= visible) m[c] = kMaskedLogit;
  return Tensor::constant({class_count}, std::move(m));
}

// Selection used for one sample under the given prompt mode. Counts toward
// pool.freq when `count` is set.
inline Selection query_prompts(PromptPool& pool, std::span<const double> q, PromptMode mode,
                               bool count) {
  Selection sel;
  switch (mode) {
    case PromptMode::pool:
      return count ? select_top_n(pool, q) : rank_top_n(pool, q);
    case PromptMode::shared_block:
      sel.indices.resize(pool.size);
      std::iota(sel.indices.begin(), sel.indices.end(), std::size_t{0});
      if (count)
        for (auto& f : pool.freq) ++f;
      return sel;
    case PromptMode::none:
      return sel;
  }
  return sel;
}

// Per-sample  L_QP + lambda * L_CE  averaged over the batch. Selections are
// made against `pool` (whose counters are bumped) and differentiated through
// the leaves in `leaves`.
inline Tensor local_loss(std::span<const Sample> batch, PromptPool& pool, StepLeaves& leaves,
                         const LossContext& ctx) {
  if (batch.empty()) throw ContractError("local_loss on an empty batch");
  if (ctx.encoder == nullptr) throw ContractError("local_loss without an encoder");
  const auto& head = leaves.head();
  const std::size_t classes = head.bias.numel();
  const Tensor mask = ctx.visible_classes < classes || ctx.first_visible_class > 0
                          ? logit_mask(classes, ctx.visible_classes, ctx.first_visible_class)
                          : Tensor{};
  std::vector<Tensor> per_sample;
  per_sample.reserve(batch.size());
  for (const auto& s : batch) {
    const Tensor embedded = ctx.encoder->embed(s.x);
    const std::span<const double> q = embedded.data().first(ctx.encoder->config().embed_dim);
    const Selection sel = query_prompts(pool, q, ctx.mode, true);
    for (auto i : sel.indices) leaves.value(i);
    const Tensor x_p = prepend(sel, leaves.values(), leaves.p_c(), embedded);
    Tensor logits = ctx.encoder->forward_with_prompts(x_p, head);
    if (mask.defined()) logits = add(logits, mask);
    Tensor loss = scale(cross_entropy(logits, s.label), ctx.lambda);
    if (ctx.mode == PromptMode::pool) {
      const Tensor query = Tensor::constant({q.size()}, {q.begin(), q.end()});
      for (auto i : sel.indices) loss = add(loss, cosine_distance(query, leaves.key(i)));
    }
    per_sample.push_back(reshape(loss, {1}));
  }
  return mean(concat_rows(per_sample));
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t steps = 0;
};

// p <- p - lr * g for SGD; bias-corrected Adam otherwise.
inline void optimizer_step(std::span<double> params, std::span<const double> grads,
                           AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("optimizer_step: " + std::to_string(grads.size()) +
                         " gradients for " + std::to_string(params.size()) + " parameters");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw TrainingDivergence("non-finite gradient");
  }
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grads[i];
    return;
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
  }
}

// Optimizer state for one client's local training. Parameters that were not
// in a step's graph are left alone, including their Adam moments.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ModelParams& params, const StepLeaves& leaves) {
    for (std::size_t i = 0; i < leaves.key_leaves().size(); ++i) {
      const auto& k = leaves.key_leaves()[i];
      if (k.defined()) apply({kKey, i}, params.pool.keys[i], k);
    }
    for (std::size_t i = 0; i < leaves.value_leaves().size(); ++i) {
      const auto& v = leaves.value_leaves()[i];
      if (v.defined()) apply({kValue, i}, params.pool.values[i], v);
    }
    if (leaves.p_c().defined()) apply({kPc, 0}, params.p_c.tokens, leaves.p_c());
    apply({kHeadW, 0}, params.head.weight, leaves.head().weight);
    apply({kHeadB, 0}, params.head.bias, leaves.head().bias);
  }

 private:
  enum Slot { kKey, kValue, kPc, kHeadW, kHeadB };

  void apply(std::pair<int, std::size_t> id, std::vector<double>& p, const Tensor& leaf) {
    const auto g = leaf.grad();
    optimizer_step(p, g, states_[id], cfg_);
  }

  TrainConfig cfg_;
  std::map<std::pair<int, std::size_t>, AdamState> states_;
};

// LocalUpdate: start from the received globals, reset frequencies, train for
// local_epochs over shuffled minibatches, and return the result. Clients
// without data (S_o) hand the globals back untouched with zero counts.
inline LocalDelta local_update(std::size_t client_id, ClientCategory category,
                               std::span<const Sample> shard, const ModelParams& globals,
                               const TrainConfig& cfg, const LossContext& ctx,
                               std::uint64_t seed) {
  cfg.validate();
  LocalDelta delta;
  delta.client_id = client_id;
  delta.params = globals;
  reset_frequencies(delta.params.pool);
  delta.sample_count = shard.size();
  if (category == ClientCategory::old_only || shard.empty()) return delta;

  Optimizer opt(cfg);
  Rng rng(seed);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Sample> batch;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(shard[order[i]]);
      StepLeaves leaves(delta.params, ctx.mode);
      const Tensor loss = local_loss(batch, delta.params.pool, leaves, ctx);
      if (!std::isfinite(loss.item())) throw TrainingDivergence("non-finite local loss");
      backward(loss);
      opt.step(delta.params, leaves);
      loss_sum += loss.item();
      ++batches;
    }
    delta.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  return delta;
}

}  // namespace fedprompt
