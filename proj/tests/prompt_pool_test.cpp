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

#include <algorithm>
#include <numeric>
#include <vector>

#include "fedprompt/prompt_pool.hpp"
#include "test_support.hpp"

namespace fp = fedprompt;
using fp::Tensor;
using fp::testing::random_values;

namespace {

// Pool whose key distances to q = e_0 are exactly the given values.
fp::PromptPool pool_with_distances(const std::vector<double>& dist, std::size_t n) {
  auto pool = fp::init_pool(dist.size(), n, 1, 2, 1);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const double c = 1.0 - dist[i];
    pool.keys[i] = {c, std::sqrt(1.0 - c * c)};
  }
  return pool;
}

TEST(InitPool, ShapesRangeAndDeterminism) {
  const auto a = fp::init_pool(10, 5, 5, 8, 3);
  EXPECT_EQ(a.keys.size(), 10u);
  EXPECT_EQ(a.values[0].size(), 40u);
  EXPECT_EQ(a.freq, std::vector<std::uint64_t>(10, 0));
  const double bound = 1.0 / std::sqrt(8.0);
  for (const auto& k : a.keys) {
    EXPECT_TRUE(std::any_of(k.begin(), k.end(), [](double v) { return v != 0.0; }));
    for (double v : k) EXPECT_LE(std::abs(v), bound);
  }
  const auto b = fp::init_pool(10, 5, 5, 8, 3);
  EXPECT_EQ(a.keys, b.keys);
  EXPECT_EQ(a.values, b.values);
  const auto t = fp::init_pool(24, 8, 5, 8, 3);
  EXPECT_EQ(t.size, 24u);
  EXPECT_EQ(t.top_n, 8u);
}

TEST(InitPool, RejectsTopNAbovePool) {
  EXPECT_THROW(fp::init_pool(3, 4, 1, 2, 1), fp::ConfigError);
  EXPECT_THROW(fp::init_pool(3, 0, 1, 2, 1), fp::ConfigError);
}

TEST(SelectTopN, ForcedByOrdering) {
  auto pool = pool_with_distances({0.9, 0.1, 0.5, 0.3}, 2);
  const std::vector<double> q{1.0, 0.0};
  const auto sel = fp::select_top_n(pool, q);
  EXPECT_EQ(sel.indices, (std::vector<std::size_t>{1, 3}));
  EXPECT_NEAR(sel.match_loss, 0.4, 1e-12);
  EXPECT_EQ(pool.freq, (std::vector<std::uint64_t>{0, 1, 0, 1}));
}

TEST(SelectTopN, AllSlotsWhenNEqualsM) {
  fp::Rng rng(1);
  auto pool = fp::init_pool(5, 5, 1, 3, 2);
  const auto sel = fp::select_top_n(pool, random_values(rng, 3));
  EXPECT_EQ(sel.indices, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(SelectTopN, TiesGoToLowerIndex) {
  auto pool = pool_with_distances({0.5, 0.2, 0.5, 0.5}, 2);
  const auto sel = fp::select_top_n(pool, std::vector<double>{1.0, 0.0});
  EXPECT_EQ(sel.indices, (std::vector<std::size_t>{0, 1}));
}

TEST(SelectTopN, ZeroQueryAndWrongWidth) {
  auto pool = fp::init_pool(4, 2, 1, 3, 1);
  EXPECT_THROW(fp::select_top_n(pool, std::vector<double>(3, 0.0)), fp::DegenerateInputError);
  EXPECT_THROW(fp::select_top_n(pool, std::vector<double>(2, 1.0)), fp::DimensionError);
}

TEST(SelectTopN, MatchesSubsetEnumeration) {
  fp::Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + fp::uniform_index(rng, 12);
    const std::size_t n = 1 + fp::uniform_index(rng, m);
    auto pool = fp::init_pool(m, n, 1, 4, rng());
    const auto q = random_values(rng, 4);
    double best = 1e300;
    std::vector<std::size_t> best_set;
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != n) continue;
      double s = 0.0;
      std::vector<std::size_t> set;
      for (std::size_t i = 0; i < m; ++i)
        if (mask >> i & 1u) {
          s += fp::cosine_distance_value(q, pool.keys[i]);
          set.push_back(i);
        }
      if (s < best) best = s, best_set = set;
    }
    EXPECT_EQ(fp::select_top_n(pool, q).indices, best_set);
  }
}

TEST(SelectTopN, InvariantUnderSlotPermutation) {
  fp::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto pool = fp::init_pool(8, 3, 1, 4, rng());
    const auto q = random_values(rng, 4);
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0u);
    fp::shuffle(perm, rng);
    auto permuted = pool;
    for (std::size_t i = 0; i < 8; ++i) permuted.keys[i] = pool.keys[perm[i]];
    auto keys_of = [](const fp::PromptPool& p, const fp::Selection& s) {
      std::vector<std::vector<double>> out;
      for (auto i : s.indices) out.push_back(p.keys[i]);
      std::sort(out.begin(), out.end());
      return out;
    };
    EXPECT_EQ(keys_of(pool, fp::rank_top_n(pool, q)), keys_of(permuted, fp::rank_top_n(permuted, q)));
  }
}

TEST(SelectTopN, InvariantUnderQueryScaling) {
  fp::Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pool = fp::init_pool(10, 4, 1, 5, rng());
    auto q = random_values(rng, 5);
    const auto base = fp::rank_top_n(pool, q).indices;
    const double s = std::exp(fp::uniform(rng, -5.0, 5.0));
    for (auto& v : q) v *= s;
    EXPECT_EQ(fp::rank_top_n(pool, q).indices, base);
  }
}

TEST(Frequencies, CountingAndReset) {
  fp::Rng rng(8);
  auto pool = fp::init_pool(6, 2, 1, 3, 4);
  std::vector<std::uint64_t> replay(6, 0);
  for (int k = 0; k < 25; ++k) {
    const auto sel = fp::select_top_n(pool, random_values(rng, 3));
    for (auto i : sel.indices) ++replay[i];
  }
  EXPECT_EQ(std::accumulate(pool.freq.begin(), pool.freq.end(), std::uint64_t{0}), 50u);
  EXPECT_EQ(pool.freq, replay);
  fp::reset_frequencies(pool);
  EXPECT_EQ(std::accumulate(pool.freq.begin(), pool.freq.end(), std::uint64_t{0}), 0u);
}

TEST(Prepend, MinimalOrder) {
  auto pool = fp::init_pool(3, 1, 1, 2, 1);
  auto p_c = fp::init_task_irrelevant(1, 2, 1);
  const Tensor x_e = Tensor::constant({1, 2}, {7, 8});
  fp::Selection sel;
  sel.indices = {2};
  const Tensor x_p = fp::prepend(sel, pool, p_c, x_e);
  ASSERT_EQ(x_p.shape(), (fp::Shape{3, 2}));
  EXPECT_EQ(x_p.at(0, 0), pool.values[2][0]);
  EXPECT_EQ(x_p.at(1, 1), p_c.tokens[1]);
  EXPECT_EQ(x_p.at(2, 0), 7.0);
}

TEST(Prepend, RowsAreSelectedValuesBitExactly) {
  fp::Rng rng(9);
  const auto pool = fp::init_pool(6, 3, 2, 4, 2);
  const auto p_c = fp::init_task_irrelevant(2, 4, 2);
  const Tensor x_e = Tensor::constant({3, 4}, random_values(rng, 12));
  fp::Selection sel;
  sel.indices = {1, 3, 4};
  const Tensor x_p = fp::prepend(sel, pool, p_c, x_e);
  ASSERT_EQ(x_p.rows(), 3u * 2u + 2u + 3u);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_EQ(x_p.data()[s * 8 + j], pool.values[sel.indices[s]][j]);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(x_p.data()[24 + j], p_c.tokens[j]);
  const Tensor again = fp::prepend(sel, pool, p_c, x_e);
  EXPECT_TRUE(std::equal(x_p.data().begin(), x_p.data().end(), again.data().begin()));
}

TEST(Prepend, GradientsFlowOnlyIntoSelectedValuesAndTaskIrrelevantPrompt) {
  const auto pool = fp::init_pool(4, 2, 1, 3, 5);
  const auto p_c = fp::init_task_irrelevant(1, 3, 5);
  std::vector<Tensor> slots(4);
  for (std::size_t i = 0; i < 4; ++i) slots[i] = Tensor::parameter({1, 3}, pool.values[i]);
  const Tensor pc = p_c.as_parameter();
  const Tensor x_e = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  fp::Selection sel;
  sel.indices = {0, 2};
  fp::backward(fp::sum(fp::tanh(fp::prepend(sel, slots, pc, x_e))));
  EXPECT_TRUE(slots[0].has_grad());
  EXPECT_FALSE(slots[1].has_grad());
  EXPECT_TRUE(slots[2].has_grad());
  EXPECT_FALSE(slots[3].has_grad());
  EXPECT_TRUE(pc.has_grad());
  EXPECT_FALSE(x_e.has_grad());
}

TEST(Prepend, WidthMismatch) {
  const auto pool = fp::init_pool(2, 1, 1, 3, 1);
  fp::Selection sel;
  sel.indices = {0};
  EXPECT_THROW(fp::prepend(sel, pool, fp::init_task_irrelevant(1, 3, 1), Tensor::zeros({1, 4})),
               fp::DimensionError);
}

TEST(PoolJson, RoundTripAndLayout) {
  auto pool = fp::init_pool(5, 2, 3, 4, 6);
  pool.freq = {3, 0, 1, 4, 2};
  const auto j = fp::to_json(pool);
  EXPECT_EQ(j.at("values").size(), 5u);
  EXPECT_EQ(j.at("values")[0].size(), 3u);
  EXPECT_EQ(j.at("values")[0][0].size(), 4u);
  EXPECT_EQ(j.at("meta").at("L_p"), 3);
  const auto back = fp::pool_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.keys, pool.keys);
  EXPECT_EQ(back.values, pool.values);
  EXPECT_EQ(back.freq, pool.freq);
  EXPECT_EQ(back.top_n, 2u);
  auto broken = j;
  broken["meta"]["M"] = 6;
  EXPECT_THROW(fp::pool_from_json(broken), fp::DimensionError);
}

}  // namespace
