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
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedprompt/datagen.hpp"
#include "fedprompt/encoder.hpp"
#include "fedprompt/errors.hpp"
#include "fedprompt/training.hpp"

namespace fedprompt {

// Lower-triangular accuracy table: row t-1 holds the accuracies on tasks
// 1..t measured after phase t. Phases are 1-based in this API.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t task_count) : rows_(task_count) {}

  std::size_t task_count() const { return rows_.size(); }

  void set_row(std::size_t phase, std::vector<double> row) {
    check_phase(phase);
    if (row.size() != phase) {
      throw ContractError("phase " + std::to_string(phase) + " row needs " +
                          std::to_string(phase) + " entries, got " +
                          std::to_string(row.size()));
    }
    for (double a : row) {
      if (!(a >= 0.0 && a <= 1.0)) throw ContractError("accuracy outside [0, 1]");
    }
    rows_[phase - 1] = std::move(row);
  }

  bool has_row(std::size_t phase) const {
    check_phase(phase);
    return rows_[phase - 1].has_value();
  }

  const std::vector<double>& row(std::size_t phase) const {
    check_phase(phase);
    if (!rows_[phase - 1]) {
      throw ContractError("phase " + std::to_string(phase) + " has not been evaluated");
    }
    return *rows_[phase - 1];
  }

  double at(std::size_t phase, std::size_t task) const {
    const auto& r = row(phase);
    if (task < 1 || task > r.size()) throw IndexError("task index outside row");
    return r[task - 1];
  }

 private:
  void check_phase(std::size_t phase) const {
    if (phase < 1 || phase > rows_.size()) {
      throw IndexError("phase " + std::to_string(phase) + " outside 1.." +
                       std::to_string(rows_.size()));
    }
  }

  std::vector<std::optional<std::vector<double>>> rows_;
};

// A_t: mean of row t.
inline double average_accuracy(const AccuracyMatrix& a, std::size_t phase) {
  const auto& r = a.row(phase);
  double s = 0.0;
  for (double v : r) s += v;
  return s / static_cast<double>(r.size());
}

// Mean of A_1..A_T.
inline double overall_average(const AccuracyMatrix& a, std::size_t task_count) {
  if (task_count == 0 || task_count > a.task_count()) {
    throw ContractError("overall_average over an invalid phase count");
  }
  double s = 0.0;
  for (std::size_t t = 1; t <= task_count; ++t) s += average_accuracy(a, t);
  return s / static_cast<double>(task_count);
}

// Mean over tasks j < T of a[j][j] - a[T][j]; zero for a single task.
inline double forgetting_gap(const AccuracyMatrix& a, std::size_t task_count) {
  if (task_count <= 1) return 0.0;
  double s = 0.0;
  for (std::size_t j = 1; j < task_count; ++j) s += a.at(j, j) - a.at(task_count, j);
  return s / static_cast<double>(task_count - 1);
}

// Argmax prediction through the same query -> prepend -> forward path used in
// training. Nothing is masked and no frequency counter moves.
inline std::size_t predict(const FrozenEncoder& encoder, const ModelParams& params,
                           PromptMode mode, std::span<const double> x,
                           const HeadTensors& head, const Tensor& p_c) {
  const Tensor embedded = encoder.embed(x);
  const auto q = embedded.data().first(encoder.config().embed_dim);
  Selection sel;
  if (mode == PromptMode::pool) {
    sel = rank_top_n(params.pool, q);
  } else if (mode == PromptMode::shared_block) {
    for (std::size_t i = 0; i < params.pool.size; ++i) sel.indices.push_back(i);
  }
  std::vector<Tensor> slots(params.pool.size);
  for (auto i : sel.indices) {
    slots[i] = Tensor::constant({params.pool.prompt_length, params.pool.embed_dim},
                                params.pool.values[i]);
  }
  const Tensor logits = encoder.forward_with_prompts(prepend(sel, slots, p_c, embedded), head);
  const auto z = logits.data();
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

inline double accuracy(const FrozenEncoder& encoder, const ModelParams& params, PromptMode mode,
                       std::span<const Sample> test) {
  if (test.empty()) throw ContractError("accuracy on an empty test set");
  const auto head = HeadTensors::constants(params.head);
  const Tensor p_c = params.p_c.as_constant();
  std::size_t correct = 0;
  for (const auto& s : test) {
    if (predict(encoder, params, mode, s.x, head, p_c) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Row for the phase that just finished: accuracy on each task's test set.
inline std::vector<double> evaluate_global(const FrozenEncoder& encoder,
                                           const ModelParams& params, PromptMode mode,
                                           std::span<const std::vector<Sample>> test_sets) {
  if (test_sets.empty()) throw ContractError("evaluate_global without test sets");
  std::vector<double> row;
  row.reserve(test_sets.size());
  for (const auto& t : test_sets) {
    if (t.empty()) throw ContractError("evaluate_global: missing test set");
    row.push_back(accuracy(encoder, params, mode, t));
  }
  return row;
}

}  // namespace fedprompt
