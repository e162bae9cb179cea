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


#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "fedprompt/datagen.hpp"
#include "fedprompt/verify.hpp"

namespace fp = fedprompt;

namespace {

std::vector<fp::PartitionMember> members(std::size_t n, fp::ClientCategory c = fp::ClientCategory::both) {
  std::vector<fp::PartitionMember> m;
  for (std::size_t i = 0; i < n; ++i) m.push_back({i, c});
  return m;
}

TEST(Stream, LayoutAndDeterminism) {
  fp::StreamSpec s;
  s.task_count = 3;
  s.classes_per_task = 4;
  s.train_per_class = 7;
  s.test_per_class = 2;
  const auto a = fp::generate_stream(s), b = fp::generate_stream(s);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(a[t].classes, (std::vector<std::size_t>{4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3}));
    EXPECT_EQ(a[t].train.size(), 28u);
    EXPECT_EQ(a[t].test.size(), 8u);
    for (const auto& x : a[t].train) {
      EXPECT_EQ(x.task, t);
      EXPECT_EQ(x.label / 4, t);
      EXPECT_EQ(x.x.size(), 16u);
    }
    EXPECT_EQ(a[t].train, b[t].train);
  }
  s.seed = 2;
  EXPECT_NE(fp::generate_stream(s)[0].train, a[0].train);
}

TEST(Stream, ClassMeansSitAtTheConfiguredRadius) {
  fp::StreamSpec s;
  s.task_count = 1;
  s.classes_per_task = 3;
  s.train_per_class = 4000;
  s.class_separation = 5.0;
  const auto t = fp::generate_stream(s)[0];
  std::map<std::size_t, std::vector<double>> mean;
  for (const auto& x : t.train) {
    auto& m = mean[x.label];
    m.resize(16, 0.0);
    for (std::size_t i = 0; i < 16; ++i) m[i] += x.x[i] / 4000.0;
  }
  for (const auto& [c, m] : mean) {
    double n = 0.0;
    for (double v : m) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 5.0, 0.15) << "class " << c;
  }
}

TEST(Stream, InvalidSpec) {
  fp::StreamSpec s;
  s.classes_per_task = 0;
  EXPECT_THROW(fp::generate_stream(s), fp::ConfigError);
}

TEST(Partition, FullOwnershipSingleClientHoldsEverything) {
  fp::StreamSpec s;
  s.task_count = 1;
  const auto t = fp::generate_stream(s)[0];
  fp::Rng rng(1);
  const auto shards = fp::partition_task(t, members(1), 1.0, rng);
  EXPECT_EQ(shards[0].samples, t.train);
  EXPECT_EQ(shards[0].owned_classes, t.classes);
}

TEST(Partition, SixtyPercentOfTenClassesIsSix) {
  EXPECT_EQ(fp::owned_class_count(0.6, 10), 6u);
  EXPECT_EQ(fp::owned_class_count(0.6, 4), 3u);
  EXPECT_EQ(fp::owned_class_count(0.6, 5), 3u);
  EXPECT_EQ(fp::owned_class_count(0.01, 5), 1u);
  fp::StreamSpec s;
  s.task_count = 1;
  s.classes_per_task = 10;
  const auto t = fp::generate_stream(s)[0];
  fp::Rng rng(2);
  for (const auto& sh : fp::partition_task(t, members(8), 0.6, rng))
    EXPECT_EQ(sh.owned_classes.size(), 6u);
}

TEST(Partition, ContractOverHundredSeeds) {
  const auto r = fp::verify::check_partition(100, 0.6);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Partition, ClassSamplesSplitEvenlyAmongOwners) {
  fp::StreamSpec s;
  s.task_count = 1;
  s.classes_per_task = 5;
  s.train_per_class = 23;
  const auto t = fp::generate_stream(s)[0];
  fp::Rng rng(3);
  const auto shards = fp::partition_task(t, members(7), 0.6, rng);
  for (auto c : t.classes) {
    std::vector<std::size_t> counts;
    for (const auto& sh : shards) {
      if (std::find(sh.owned_classes.begin(), sh.owned_classes.end(), c) == sh.owned_classes.end())
        continue;
      counts.push_back(std::count_if(sh.samples.begin(), sh.samples.end(),
                                     [c](const fp::Sample& x) { return x.label == c; }));
    }
    ASSERT_FALSE(counts.empty());
    EXPECT_LE(*std::max_element(counts.begin(), counts.end()) -
                  *std::min_element(counts.begin(), counts.end()),
              1u);
  }
}

TEST(Partition, OldOnlyClientsGetNothing) {
  fp::StreamSpec s;
  s.task_count = 1;
  const auto t = fp::generate_stream(s)[0];
  auto m = members(5);
  m[2].category = fp::ClientCategory::old_only;
  fp::Rng rng(4);
  const auto shards = fp::partition_task(t, m, 0.6, rng);
  EXPECT_TRUE(shards[2].samples.empty());
  EXPECT_TRUE(shards[2].owned_classes.empty());
}

TEST(Partition, UncoverableOwnershipGivesUp) {
  fp::StreamSpec s;
  s.task_count = 1;
  const auto t = fp::generate_stream(s)[0];
  fp::Rng rng(5);
  EXPECT_THROW(fp::partition_task(t, members(1), 0.5, rng, 20), fp::ConfigError);
  EXPECT_THROW(fp::partition_task(t, members(3), 0.0, rng), fp::ConfigError);
  EXPECT_THROW(fp::partition_task(t, members(0), 0.6, rng), fp::ConfigError);
  EXPECT_THROW(fp::partition_task(t, members(3, fp::ClientCategory::old_only), 0.6, rng),
               fp::ConfigError);
}

TEST(Partition, ClientsDrawDifferentSubsets) {
  // With 10 classes and 6 owned, two clients share a subset with
  // probability 1/210; across many pairs identical subsets must stay rare.
  fp::StreamSpec s;
  s.task_count = 1;
  s.classes_per_task = 10;
  s.train_per_class = 5;
  const auto t = fp::generate_stream(s)[0];
  std::size_t pairs = 0, same = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    fp::Rng rng(seed);
    const auto shards = fp::partition_task(t, members(6), 0.6, rng);
    for (std::size_t i = 0; i < shards.size(); ++i)
      for (std::size_t j = i + 1; j < shards.size(); ++j, ++pairs)
        same += shards[i].owned_classes == shards[j].owned_classes;
  }
  EXPECT_LT(static_cast<double>(same) / static_cast<double>(pairs), 0.02);
}

TEST(Jsonl, RoundTripAndBadLine) {
  fp::StreamSpec s;
  s.task_count = 2;
  s.train_per_class = 3;
  const auto t = fp::generate_stream(s);
  std::stringstream io;
  fp::dump_jsonl(io, t[0].train);
  fp::dump_jsonl(io, t[1].train);
  const auto back = fp::load_jsonl(io);
  ASSERT_EQ(back.size(), 24u);
  EXPECT_EQ(std::vector<fp::Sample>(back.begin(), back.begin() + 12), t[0].train);
  std::stringstream bad("{\"x\": [1], \"task\": 0}\n");
  EXPECT_THROW(fp::load_jsonl(bad), fp::ConfigError);
}

}  // namespace
