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


// Smallest end-to-end use of the library: a two-task federated run with the
// prompt pool, then the same stream under the head-only baseline.

#include <cstdio>

#include "fedprompt/experiment.hpp"

int main() {
  fedprompt::ExperimentConfig c;
  c.stream.task_count = 2;
  c.stream.classes_per_task = 3;
  c.federation.initial_clients = 4;
  c.federation.sampled_per_round = 3;
  c.federation.rounds_per_task = 2;

  fedprompt::RunOptions opts;
  opts.write_artifacts = false;
  for (auto m : {fedprompt::Method::fcilpt, fedprompt::Method::fedavg_finetune}) {
    const auto r = fedprompt::run_experiment(c, opts, m);
    std::printf("%-16s A_1 %.3f  A_2 %.3f\n", fedprompt::method_name(m),
                fedprompt::average_accuracy(r.accuracy, 1),
                fedprompt::average_accuracy(r.accuracy, 2));
  }
}
