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


// Oracle and invariant checks shared by the `verify` subcommand and the
// acceptance suite. Every check compares library behaviour against an
// independent computation (brute force, finite differences, plain loops).

#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedprompt/experiment.hpp"

namespace fedprompt::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double a = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -a, a);
  return v;
}

inline std::size_t random_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform_index(rng, hi - lo + 1));
}

// Plain-loop cosine distance, written out again on purpose.
inline double cosine_distance_oracle(const std::vector<double>& u, const std::vector<double>& v) {
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return 1.0 - dot / std::sqrt(uu * vv);
}

template <typename Fn>
CheckResult timed(std::string name, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.name = std::move(name);
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Analytic gradients of the local objective vs central finite differences
// ---------------------------------------------------------------------------

struct GradientInstance {
  FrozenEncoder encoder{EncoderConfig{}};
  ModelParams params;
  std::vector<Sample> batch;
  LossContext ctx;
};

inline GradientInstance random_gradient_instance(Rng& rng) {
  using detail::random_between;
  EncoderConfig ec;
  ec.raw_dim = random_between(rng, 2, 6);
  ec.token_count = random_between(rng, 1, 3);
  ec.head_count = random_between(rng, 1, 2);
  ec.embed_dim = ec.head_count * random_between(rng, 2, 3);
  ec.depth = random_between(rng, 1, 2);
  ec.seed = rng();
  GradientInstance inst{FrozenEncoder(ec), {}, {}, {}};
  const std::size_t d = ec.embed_dim;
  const std::size_t m = random_between(rng, 2, 6);
  const std::size_t classes = random_between(rng, 2, 6);
  inst.params.pool = init_pool(m, random_between(rng, 1, m), random_between(rng, 1, 2), d, rng());
  inst.params.p_c = init_task_irrelevant(random_between(rng, 0, 2), d, rng());
  inst.params.head = ClassifierHead::init(d, classes, rng());
  // Move the head off its zero bias so every term is exercised.
  for (auto& b : inst.params.head.bias) b = uniform(rng, -0.5, 0.5);

  const PromptMode modes[] = {PromptMode::pool, PromptMode::pool, PromptMode::shared_block,
                              PromptMode::none};
  inst.ctx.mode = modes[uniform_index(rng, 4)];
  inst.ctx.lambda = uniform(rng, 0.1, 2.0);
  inst.ctx.visible_classes = random_between(rng, 1, classes);
  const std::size_t batch = random_between(rng, 1, 3);
  for (std::size_t i = 0; i < batch; ++i) {
    Sample s;
    s.x = detail::random_vector(rng, ec.raw_dim, 2.0);
    s.label = uniform_index(rng, inst.ctx.visible_classes);
    inst.batch.push_back(std::move(s));
  }
  return inst;
}

// Loss value at `params`, or nothing if some sample's selection differs from
// `reference` (the objective is only piecewise smooth in the keys).
inline std::optional<double> loss_value(const GradientInstance& inst, const ModelParams& params,
                                        const std::vector<Selection>* reference) {
  if (reference && inst.ctx.mode == PromptMode::pool) {
    for (std::size_t i = 0; i < inst.batch.size(); ++i) {
      const auto q = inst.encoder.query_features(inst.batch[i].x);
      if (rank_top_n(params.pool, q).indices != (*reference)[i].indices) return std::nullopt;
    }
  }
  ModelParams copy = params;
  StepLeaves leaves(copy, inst.ctx.mode);
  LossContext ctx = inst.ctx;
  ctx.encoder = &inst.encoder;
  return local_loss(inst.batch, copy.pool, leaves, ctx).item();
}

struct GradientStats {
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
};

// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline GradientStats gradient_check(std::size_t instances, std::uint64_t seed,
                                    double step = 1e-5, double floor = 1e-6) {
  Rng rng(seed);
  GradientStats st;
  for (std::size_t n = 0; n < instances; ++n) {
    GradientInstance inst = random_gradient_instance(rng);
    LossContext ctx = inst.ctx;
    ctx.encoder = &inst.encoder;
    ModelParams work = inst.params;
    StepLeaves leaves(work, ctx.mode);
    const Tensor loss = local_loss(inst.batch, work.pool, leaves, ctx);
    backward(loss);
    std::vector<Selection> sel;
    for (const auto& s : inst.batch)
      sel.push_back(rank_top_n(inst.params.pool, inst.encoder.query_features(s.x)));

    auto probe = [&](const Tensor& leaf, auto&& field) {
      if (!leaf.defined()) return;
      const auto g = leaf.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ModelParams plus = inst.params, minus = inst.params;
        field(plus)[i] += step;
        field(minus)[i] -= step;
        const auto fp = loss_value(inst, plus, &sel);
        const auto fm = loss_value(inst, minus, &sel);
        if (!fp || !fm) {
          ++st.skipped;
          continue;
        }
        const double numeric = (*fp - *fm) / (2.0 * step);
        const double denom = std::max({std::abs(g[i]), std::abs(numeric), floor});
        st.max_rel_error = std::max(st.max_rel_error, std::abs(g[i] - numeric) / denom);
        ++st.coordinates;
      }
    };
    for (std::size_t k = 0; k < work.pool.size; ++k) {
      probe(leaves.key_leaves()[k], [k](ModelParams& p) -> std::vector<double>& {
        return p.pool.keys[k];
      });
      probe(leaves.value_leaves()[k], [k](ModelParams& p) -> std::vector<double>& {
        return p.pool.values[k];
      });
    }
    probe(leaves.p_c(), [](ModelParams& p) -> std::vector<double>& { return p.p_c.tokens; });
    probe(leaves.head().weight,
          [](ModelParams& p) -> std::vector<double>& { return p.head.weight; });
    probe(leaves.head().bias, [](ModelParams& p) -> std::vector<double>& { return p.head.bias; });
    ++st.instances;
  }
  return st;
}

inline CheckResult check_gradients(std::size_t instances = 100, std::uint64_t seed = 7) {
  return detail::timed("gradient correctness vs central differences", [&] {
    const auto st = gradient_check(instances, seed);
    CheckResult r;
    r.pass = st.max_rel_error < 1e-4 && st.coordinates > 0;
    r.detail = std::to_string(st.instances) + " instances, " + std::to_string(st.coordinates) +
               " coordinates (" + std::to_string(st.skipped) +
               " skipped at selection boundaries), max rel err " + detail::fmt(st.max_rel_error);
    return r;
  });
}

// ---------------------------------------------------------------------------
// Top-N selection vs brute force over all size-N subsets
// ---------------------------------------------------------------------------

inline CheckResult check_top_n(std::size_t queries = 1000, std::uint64_t seed = 11) {
  return detail::timed("top-N selection vs subset brute force", [&] {
    Rng rng(seed);
    std::size_t mismatches = 0;
    for (std::size_t n = 0; n < queries; ++n) {
      const std::size_t m = detail::random_between(rng, 1, 12);
      const std::size_t top = detail::random_between(rng, 1, m);
      const std::size_t d = detail::random_between(rng, 2, 8);
      PromptPool pool = init_pool(m, top, 1, d, rng());
      const auto q = detail::random_vector(rng, d);

      std::vector<double> dist(m);
      for (std::size_t i = 0; i < m; ++i) dist[i] = detail::cosine_distance_oracle(q, pool.keys[i]);
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_mask = 0;
      for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != top) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i)
          if (mask & (1u << i)) s += dist[i];
        if (s < best) {
          best = s;
          best_mask = mask;
        }
      }
      std::vector<std::size_t> expect;
      for (std::size_t i = 0; i < m; ++i)
        if (best_mask & (1u << i)) expect.push_back(i);

      const auto before = pool.freq;
      const Selection got = select_top_n(pool, q);
      bool ok = got.indices == expect && std::abs(got.match_loss - best) < 1e-12;
      for (std::size_t i = 0; i < m; ++i) {
        const bool chosen = std::find(expect.begin(), expect.end(), i) != expect.end();
        ok = ok && pool.freq[i] == before[i] + (chosen ? 1 : 0);
      }
      if (!ok) ++mismatches;
    }
    CheckResult r;
    r.pass = mismatches == 0;
    r.detail = std::to_string(queries) + " queries, " + std::to_string(mismatches) + " mismatches";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Sort and aggregate algebra
// ---------------------------------------------------------------------------

inline LocalDelta random_delta(Rng& rng, std::size_t client_id, std::size_t m, std::size_t lp,
                               std::size_t d, std::size_t lc, std::size_t classes) {
  LocalDelta delta;
  delta.client_id = client_id;
  auto& p = delta.params;
  p.pool = init_pool(m, 1, lp, d, rng());
  // Small integer counts so that ties are common.
  for (auto& f : p.pool.freq) f = uniform_index(rng, 4);
  p.p_c = init_task_irrelevant(lc, d, rng());
  p.head = ClassifierHead::init(d, classes, rng());
  for (auto& b : p.head.bias) b = uniform(rng, -1.0, 1.0);
  return delta;
}

inline CheckResult check_sort_aggregate(std::size_t trials = 1000, std::uint64_t seed = 13) {
  return detail::timed("sort pairing, aggregate mean, client-order invariance", [&] {
    Rng rng(seed);
    std::size_t bad_pairing = 0, bad_mean = 0, bad_perm = 0, bad_order = 0;
    for (std::size_t n = 0; n < trials; ++n) {
      const std::size_t m = detail::random_between(rng, 1, 8);
      const std::size_t lp = detail::random_between(rng, 1, 3);
      const std::size_t d = detail::random_between(rng, 1, 5);
      const std::size_t lc = detail::random_between(rng, 0, 2);
      const std::size_t classes = detail::random_between(rng, 1, 5);
      const std::size_t k = detail::random_between(rng, 1, 6);
      std::vector<LocalDelta> deltas;
      std::vector<std::size_t> ids(k * 3);
      std::iota(ids.begin(), ids.end(), std::size_t{0});
      shuffle(ids, rng);
      for (std::size_t c = 0; c < k; ++c)
        deltas.push_back(random_delta(rng, ids[c], m, lp, d, lc, classes));

      // (key, value, freq) triples survive sorting as a multiset, and the
      // sorted counters are non-increasing.
      for (const auto& dl : deltas) {
        const LocalDelta s = sort_pool(dl);
        using Triple = std::tuple<std::vector<double>, std::vector<double>, std::uint64_t>;
        std::vector<Triple> a, b;
        for (std::size_t i = 0; i < m; ++i) {
          a.emplace_back(dl.params.pool.keys[i], dl.params.pool.values[i], dl.params.pool.freq[i]);
          b.emplace_back(s.params.pool.keys[i], s.params.pool.values[i], s.params.pool.freq[i]);
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) ++bad_pairing;
        if (!std::is_sorted(s.params.pool.freq.rbegin(), s.params.pool.freq.rend())) ++bad_order;
      }

      // Mean oracle: per coordinate, sum in ascending client id then divide.
      std::vector<const LocalDelta*> by_id;
      for (const auto& dl : deltas) by_id.push_back(&dl);
      std::sort(by_id.begin(), by_id.end(),
                [](const LocalDelta* x, const LocalDelta* y) { return x->client_id < y->client_id; });
      auto mean_of = [&](auto&& get, std::size_t len) {
        std::vector<double> out(len, 0.0);
        for (const auto* dl : by_id) {
          const std::vector<double>& src = get(dl->params);
          for (std::size_t i = 0; i < len; ++i) out[i] += src[i];
        }
        for (auto& v : out) v /= static_cast<double>(k);
        return out;
      };
      const ModelParams g = aggregate(deltas);
      bool ok = true;
      auto near = [](const std::vector<double>& x, const std::vector<double>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
          if (std::abs(x[i] - y[i]) > 1e-12 * std::max(1.0, std::abs(y[i]))) return false;
        return true;
      };
      for (std::size_t i = 0; i < m; ++i) {
        ok = ok && near(g.pool.keys[i], mean_of([i](const ModelParams& p) -> const auto& {
                          return p.pool.keys[i];
                        }, d));
        ok = ok && near(g.pool.values[i], mean_of([i](const ModelParams& p) -> const auto& {
                          return p.pool.values[i];
                        }, lp * d));
      }
      ok = ok && near(g.p_c.tokens,
                      mean_of([](const ModelParams& p) -> const auto& { return p.p_c.tokens; },
                              lc * d));
      ok = ok && near(g.head.weight,
                      mean_of([](const ModelParams& p) -> const auto& { return p.head.weight; },
                              d * classes));
      ok = ok && near(g.head.bias,
                      mean_of([](const ModelParams& p) -> const auto& { return p.head.bias; },
                              classes));
      if (!ok) ++bad_mean;

      // Exact equality under any order of the upload list.
      auto shuffled = deltas;
      shuffle(shuffled, rng);
      const ModelParams g2 = aggregate(shuffled);
      if (g2.pool.keys != g.pool.keys || g2.pool.values != g.pool.values ||
          g2.p_c.tokens != g.p_c.tokens || g2.head.weight != g.head.weight ||
          g2.head.bias != g.head.bias) {
        ++bad_perm;
      }
    }
    CheckResult r;
    r.pass = bad_pairing == 0 && bad_mean == 0 && bad_perm == 0 && bad_order == 0;
    r.detail = std::to_string(trials) + " trials; pairing " + std::to_string(bad_pairing) +
               ", order " + std::to_string(bad_order) + ", mean " + std::to_string(bad_mean) +
               ", permutation " + std::to_string(bad_perm) + " failures";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Frozen backbone and sparse prompt updates
// ---------------------------------------------------------------------------

inline ExperimentConfig small_config(std::size_t tasks, std::uint64_t seed) {
  ExperimentConfig c;
  c.stream.task_count = tasks;
  c.stream.classes_per_task = 3;
  c.stream.raw_dim = 8;
  c.stream.train_per_class = 12;
  c.stream.test_per_class = 6;
  c.encoder.raw_dim = 8;
  c.encoder.embed_dim = 8;
  c.federation.initial_clients = 4;
  c.federation.sampled_per_round = 3;
  c.federation.rounds_per_task = 2;
  c.federation.new_clients_per_transition = 1;
  c.train.local_epochs = 2;
  c.train.batch_size = 4;
  c.prompts.pool_size = 6;
  c.prompts.top_n = 2;
  return with_seed(c, seed);
}

inline CheckResult check_frozen_backbone(std::uint64_t seed = 17) {
  return detail::timed("frozen encoder and untouched unselected prompts", [&] {
    CheckResult r;
    const ExperimentConfig c = small_config(3, seed);
    RunOptions o;
    o.write_artifacts = false;
    const RunResult run = run_experiment(c, o);
    const FrozenEncoder fresh(c.encoder);
    const auto init = fresh.flat_weights();
    const bool same = run.encoder_weights_after.size() == init.size() &&
                      std::memcmp(run.encoder_weights_after.data(), init.data(),
                                  init.size() * sizeof(double)) == 0;

    // Step by step: a slot nobody selected in a step keeps its exact bits,
    // even once it carries Adam moments from earlier steps.
    const FrozenEncoder enc(c.encoder);
    const auto stream = generate_stream(c.stream);
    ModelParams p = initial_params(c, Method::fcilpt);
    Optimizer opt(c.train);
    LossContext ctx{&enc, PromptMode::pool, c.train.lambda, c.stream.classes_per_task};
    std::size_t steps = 0, checked = 0, changed = 0, moved_selected = 0;
    const auto& data = stream[0].train;
    for (std::size_t start = 0; start + 4 <= data.size(); start += 4, ++steps) {
      std::vector<Sample> batch(data.begin() + static_cast<std::ptrdiff_t>(start),
                                data.begin() + static_cast<std::ptrdiff_t>(start + 4));
      const auto before = p.pool.values;
      const auto freq_before = p.pool.freq;
      StepLeaves leaves(p, ctx.mode);
      backward(local_loss(batch, p.pool, leaves, ctx));
      opt.step(p, leaves);
      for (std::size_t i = 0; i < p.pool.size; ++i) {
        if (p.pool.freq[i] == freq_before[i]) {
          ++checked;
          if (std::memcmp(before[i].data(), p.pool.values[i].data(),
                          before[i].size() * sizeof(double)) != 0) {
            ++changed;
          }
        } else if (before[i] != p.pool.values[i]) {
          ++moved_selected;
        }
      }
    }
    r.pass = same && !fresh.any_weight_has_grad() && checked > 0 && changed == 0 &&
             moved_selected > 0;
    r.detail = std::string("encoder weights ") + (same ? "bit-identical" : "CHANGED") + "; " +
               std::to_string(steps) + " steps, " + std::to_string(checked) +
               " unselected slot-steps, " + std::to_string(changed) + " changed";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Metric arithmetic on hand-computed tables
// ---------------------------------------------------------------------------

inline CheckResult check_metrics() {
  return detail::timed("A_t, Avg and forgetting on fixed tables", [&] {
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
      if (!ok) failures.push_back(what);
    };
    auto eq = [](double a, double b) { return std::abs(a - b) < 1e-12; };
    {
      AccuracyMatrix a(2);
      a.set_row(1, {0.9});
      a.set_row(2, {0.8, 0.7});
      expect(eq(average_accuracy(a, 1), 0.9), "A_1 of [[0.9],[0.8,0.7]]");
      expect(eq(average_accuracy(a, 2), 0.75), "A_2 of [[0.9],[0.8,0.7]]");
      expect(eq(overall_average(a, 2), 0.825), "Avg of [[0.9],[0.8,0.7]]");
      expect(eq(forgetting_gap(a, 2), 0.1), "forgetting of [[0.9],[0.8,0.7]]");
    }
    {
      AccuracyMatrix a(3);
      a.set_row(1, {1.0});
      a.set_row(2, {0.5, 1.0});
      a.set_row(3, {0.25, 0.5, 1.0});
      // A = 1, 0.75, 0.5833...; Avg = (1 + 0.75 + 7/12) / 3 = 7/9
      expect(eq(average_accuracy(a, 3), 7.0 / 12.0), "A_3 of halving table");
      expect(eq(overall_average(a, 3), 7.0 / 9.0), "Avg of halving table");
      expect(eq(forgetting_gap(a, 3), (0.75 + 0.5) / 2.0), "forgetting of halving table");
    }
    {
      AccuracyMatrix a(1);
      a.set_row(1, {0.4});
      expect(eq(overall_average(a, 1), 0.4), "single task Avg");
      expect(eq(forgetting_gap(a, 1), 0.0), "single task forgetting");
    }
    CheckResult r;
    r.pass = failures.empty();
    r.detail = failures.empty() ? "all hand-computed values match" : "mismatch: " + failures[0];
    return r;
  });
}

// ---------------------------------------------------------------------------
// Non-iid partition contract
// ---------------------------------------------------------------------------

inline CheckResult check_partition(std::size_t seeds = 100, double fraction = 0.6) {
  return detail::timed("non-iid partition: union and class ownership", [&] {
    std::size_t bad_union = 0, bad_count = 0, bad_old = 0, distinct_subsets = 0;
    for (std::size_t s = 1; s <= seeds; ++s) {
      Rng rng(derive_seed(s, {0x7061727469}));
      StreamSpec spec;
      spec.task_count = 1;
      spec.classes_per_task = detail::random_between(rng, 2, 10);
      spec.raw_dim = 3;
      spec.train_per_class = detail::random_between(rng, 1, 15);
      spec.test_per_class = 1;
      spec.seed = s;
      const TaskData task = generate_stream(spec)[0];
      std::vector<PartitionMember> members;
      // At least four data holders, so that full class coverage is reachable.
      const std::size_t n = detail::random_between(rng, 4, 12);
      for (std::size_t i = 0; i < n; ++i) {
        const ClientCategory cats[] = {ClientCategory::old_only, ClientCategory::both,
                                       ClientCategory::fresh};
        const ClientCategory cat = cats[uniform_index(rng, 3)];
        members.push_back({i, i < 4 && cat == ClientCategory::old_only ? ClientCategory::both
                                                                        : cat});
      }
      const auto shards = partition_task(task, members, fraction, rng);
      const auto need = static_cast<std::size_t>(
          std::ceil(fraction * static_cast<double>(spec.classes_per_task) - 1e-9));

      std::vector<Sample> all;
      std::vector<std::vector<std::size_t>> subsets;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& sh = shards[i];
        all.insert(all.end(), sh.samples.begin(), sh.samples.end());
        if (members[i].category == ClientCategory::old_only) {
          if (!sh.samples.empty() || !sh.owned_classes.empty()) ++bad_old;
          continue;
        }
        std::set<std::size_t> owned(sh.owned_classes.begin(), sh.owned_classes.end());
        if (owned.size() != need) ++bad_count;
        for (const auto& x : sh.samples)
          if (!owned.count(x.label)) ++bad_count;
        subsets.push_back(sh.owned_classes);
      }
      auto expect = task.train;
      std::sort(all.begin(), all.end());
      std::sort(expect.begin(), expect.end());
      if (all != expect) ++bad_union;
      std::sort(subsets.begin(), subsets.end());
      if (std::unique(subsets.begin(), subsets.end()) - subsets.begin() > 1) ++distinct_subsets;
    }
    CheckResult r;
    r.pass = bad_union == 0 && bad_count == 0 && bad_old == 0;
    r.detail = std::to_string(seeds) + " seeds; union " + std::to_string(bad_union) +
               ", ownership " + std::to_string(bad_count) + ", S_o " + std::to_string(bad_old) +
               " failures; " + std::to_string(distinct_subsets) +
               " seeds with differing client subsets";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Determinism across repeated runs and thread counts
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline CheckResult check_determinism(const std::filesystem::path& scratch,
                                     std::uint64_t seed = 19) {
  return detail::timed("byte-identical summary across runs and thread counts", [&] {
    ExperimentConfig c = small_config(2, seed);
    std::vector<std::string> summaries, transcripts;
    const std::size_t threads[] = {1, 1, 3};
    for (std::size_t i = 0; i < 3; ++i) {
      c.output_dir = (scratch / ("determinism_" + std::to_string(i))).string();
      RunOptions o;
      o.threads = threads[i];
      run_experiment(c, o);
      summaries.push_back(read_file(std::filesystem::path(c.output_dir) / "summary.json"));
      transcripts.push_back(read_file(std::filesystem::path(c.output_dir) / "transcript.jsonl"));
    }
    CheckResult r;
    r.pass = !summaries[0].empty() && summaries[0] == summaries[1] &&
             summaries[0] == summaries[2] && transcripts[0] == transcripts[2];
    r.detail = r.pass ? "3 runs (threads 1, 1, 3) agree byte for byte"
                      : "summary.json or transcript differs between runs";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Transcript replay through a straight-line protocol implementation
// ---------------------------------------------------------------------------

namespace replay {

inline std::string checksum(const std::vector<std::vector<double>>& parts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& part : parts) {
    for (double v : part) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json checksums(const ModelParams& p) {
  return {{"keys", checksum(p.pool.keys)},
          {"values", checksum(p.pool.values)},
          {"p_c", checksum({p.p_c.tokens})},
          {"head", checksum({p.head.weight, p.head.bias})}};
}

}  // namespace replay

// Re-runs a finished experiment's rounds with the protocol written out step
// by step (sample, local update, sort, mean) and compares every message
// checksum in its transcript.jsonl.
inline CheckResult check_replay(const std::filesystem::path& scratch, std::uint64_t seed = 23) {
  return detail::timed("transcript replay through straight-line protocol", [&] {
    ExperimentConfig c = small_config(2, seed);
    c.output_dir = (scratch / "replay").string();
    run_experiment(c, {});
    std::vector<nlohmann::json> log;
    {
      std::ifstream in(std::filesystem::path(c.output_dir) / "transcript.jsonl");
      std::string line;
      while (std::getline(in, line)) log.push_back(nlohmann::json::parse(line));
    }

    const FrozenEncoder enc(c.encoder);
    const auto stream = generate_stream(c.stream);
    ModelParams global = initial_params(c, Method::fcilpt);
    ClientRegistry reg = make_registry(c.federation.initial_clients);
    Rng server(derive_seed(c.seed, {0x736572766572}));
    assign_task(reg, stream[0], c.federation.ownership_fraction, server);
    GlobalState lifecycle;

    std::size_t cursor = 0, rounds = 0, mismatches = 0, round_index = 0;
    for (std::size_t t = 0; t < c.stream.task_count; ++t) {
      if (t > 0) advance_task(lifecycle, reg, stream, c.federation, server);
      for (std::size_t r = 0; r < c.federation.rounds_per_task; ++r, ++round_index) {
        // sample: partial Fisher-Yates over the eligible ids
        std::vector<std::size_t> ids;
        for (const auto& cl : reg.clients) ids.push_back(cl.id);
        const std::size_t h = c.federation.sampled_per_round;
        for (std::size_t i = 0; i < h; ++i)
          std::swap(ids[i], ids[i + uniform_index(server, ids.size() - i)]);
        ids.resize(h);
        std::sort(ids.begin(), ids.end());

        // update + sort
        const LossContext ctx{&enc, PromptMode::pool, c.train.lambda,
                              (t + 1) * c.stream.classes_per_task};
        std::vector<ModelParams> uploads;
        for (auto id : ids) {
          const auto& cl = reg.clients[id];
          LocalDelta d = local_update(id, cl.category, cl.shard.samples, global, c.train, ctx,
                                      derive_seed(c.seed, {0x6c6f63616c, t, round_index, id}));
          std::vector<std::size_t> order(d.params.pool.size);
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return d.params.pool.freq[a] > d.params.pool.freq[b];
          });
          ModelParams up = d.params;
          for (std::size_t i = 0; i < order.size(); ++i) {
            up.pool.keys[i] = d.params.pool.keys[order[i]];
            up.pool.values[i] = d.params.pool.values[order[i]];
          }
          const auto& rec = log.at(cursor++);
          if (rec.at("event") != "client_update" || rec.at("client") != id ||
              rec.at("upload") != replay::checksums(up) ||
              rec.at("trained") != replay::checksums(d.params)) {
            ++mismatches;
          }
          uploads.push_back(std::move(up));
        }

        // aggregate: running mean in ascending id order
        ModelParams next = uploads.front();
        auto average = [&](auto&& field) {
          auto& out = field(next);
          for (std::size_t i = 0; i < out.size(); ++i) {
            double m = field(uploads[0])[i];
            for (std::size_t k = 1; k < uploads.size(); ++k)
              m += (field(uploads[k])[i] - m) / static_cast<double>(k + 1);
            out[i] = m;
          }
        };
        for (std::size_t k = 0; k < next.pool.size; ++k) {
          average([k](ModelParams& p) -> std::vector<double>& { return p.pool.keys[k]; });
          average([k](ModelParams& p) -> std::vector<double>& { return p.pool.values[k]; });
        }
        average([](ModelParams& p) -> std::vector<double>& { return p.p_c.tokens; });
        average([](ModelParams& p) -> std::vector<double>& { return p.head.weight; });
        average([](ModelParams& p) -> std::vector<double>& { return p.head.bias; });
        std::fill(next.pool.freq.begin(), next.pool.freq.end(), 0);
        global = std::move(next);

        const auto& agg = log.at(cursor++);
        if (agg.at("event") != "aggregate" || agg.at("global") != replay::checksums(global) ||
            agg.at("clients").get<std::vector<std::size_t>>() != ids) {
          ++mismatches;
        }
        ++rounds;
      }
    }
    CheckResult r;
    r.pass = mismatches == 0 && cursor == log.size() && rounds > 0;
    r.detail = std::to_string(rounds) + " rounds, " + std::to_string(cursor) + "/" +
               std::to_string(log.size()) + " transcript records replayed, " +
               std::to_string(mismatches) + " mismatches";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Forgetting-mitigation trend on the acceptance fixture
// ---------------------------------------------------------------------------

// T=5 tasks of 4 classes over 16 raw features, 10 clients, 5 sampled per
// round, 5 rounds per task, 60% class ownership.
inline ExperimentConfig acceptance_fixture() {
  ExperimentConfig c;
  c.stream.task_count = 5;
  c.stream.classes_per_task = 4;
  c.stream.raw_dim = 16;
  c.encoder.raw_dim = 16;
  c.federation.initial_clients = 10;
  c.federation.sampled_per_round = 5;
  c.federation.rounds_per_task = 5;
  c.federation.ownership_fraction = 0.6;
  return c;
}

struct TrendRow {
  std::uint64_t seed = 0;
  double full = 0, no_sort = 0, no_pool = 0, baseline = 0;
};

inline std::vector<TrendRow> trend_rows(const ExperimentConfig& base,
                                        std::span<const std::uint64_t> seeds,
                                        std::size_t threads = 1) {
  RunOptions o;
  o.write_artifacts = false;
  o.threads = threads;
  std::vector<TrendRow> rows;
  for (auto s : seeds) {
    const ExperimentConfig c = with_seed(base, s);
    auto final_a = [&](ExperimentConfig v, Method m) {
      const auto r = run_experiment(v, o, m);
      return average_accuracy(r.accuracy, v.stream.task_count);
    };
    TrendRow row;
    row.seed = s;
    row.full = final_a(c, Method::fcilpt);
    ExperimentConfig ns = c;
    ns.ablations.sort = false;
    row.no_sort = final_a(ns, Method::fcilpt);
    ExperimentConfig np = ns;
    np.ablations.task_relevant = false;
    row.no_pool = final_a(np, Method::fcilpt);
    row.baseline = final_a(c, Method::fedavg_finetune);
    rows.push_back(row);
  }
  return rows;
}

inline CheckResult check_trend(std::span<const std::uint64_t> seeds, std::size_t threads = 1) {
  return detail::timed("forgetting-mitigation trend on the fixture", [&] {
    const auto rows = trend_rows(acceptance_fixture(), seeds, threads);
    double full = 0, ns = 0, np = 0, base = 0;
    std::size_t wins = 0;
    for (const auto& r : rows) {
      full += r.full / rows.size();
      ns += r.no_sort / rows.size();
      np += r.no_pool / rows.size();
      base += r.baseline / rows.size();
      wins += r.full > r.baseline;
    }
    const std::size_t need = rows.size() == 5 ? 4 : (rows.size() * 4 + 4) / 5;
    CheckResult r;
    r.pass = full > base && full >= ns && ns >= np && wins >= need;
    r.detail = "mean final A_T: full " + detail::fmt(full) + ", no-sort " + detail::fmt(ns) +
               ", no-pool " + detail::fmt(np) + ", fedavg-finetune " + detail::fmt(base) +
               "; full beats baseline on " + std::to_string(wins) + "/" +
               std::to_string(rows.size()) + " seeds";
    return r;
  });
}

}  // namespace fedprompt::verify
