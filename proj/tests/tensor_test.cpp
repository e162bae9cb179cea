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

#include <cmath>
#include <vector>

#include "fedprompt/tensor.hpp"
#include "test_support.hpp"

namespace fp = fedprompt;
using fp::Tensor;
using fp::testing::gradient_error;
using fp::testing::random_values;

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor::constant({2, 3}, {1, 2, 3}), fp::DimensionError);
  const Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
}

TEST(Matmul, IdentityAndScalar) {
  const Tensor i = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::constant({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(to_vec(fp::matmul(i, b).data()), (std::vector<double>{3, 4, 5, 6}));
  EXPECT_EQ(fp::matmul(Tensor::constant({1, 1}, {2}), Tensor::constant({1, 1}, {3})).item(), 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
  fp::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_values(rng, 12), b = random_values(rng, 8);
    const auto c = fp::matmul(Tensor::constant({3, 4}, a), Tensor::constant({4, 2}, b));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 2 + j];
        EXPECT_NEAR(c.at(i, j), s, 1e-14);
      }
  }
}

TEST(Matmul, InnerDimensionMismatch) {
  EXPECT_THROW(fp::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), fp::DimensionError);
}

TEST(Softmax, KnownRows) {
  const auto s = fp::softmax_rows(Tensor::constant({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  const auto big = fp::softmax_rows(Tensor::constant({2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-300);
  const auto r = fp::softmax_rows(Tensor::constant({3}, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r[i], std::exp(i + 1.0) / z, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  fp::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = fp::softmax_rows(Tensor::constant({4, 5}, random_values(rng, 20, 30.0)));
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GE(s.at(i, j), 0.0);
        sum += s.at(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, ConstantRowAndNormalisedRow) {
  const auto c = fp::layer_norm(Tensor::constant({3}, {5, 5, 5}));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(c[i], 0.0);
  const auto u = fp::layer_norm(Tensor::constant({2}, {1, -1}), 1e-14);
  EXPECT_NEAR(u[0], 1.0, 1e-12);
  EXPECT_NEAR(u[1], -1.0, 1e-12);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
  fp::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_values(rng, 8, 10.0);
    const auto y = fp::layer_norm(Tensor::constant({1, 8}, x));
    double mean = 0.0, var = 0.0;
    for (double v : y.data()) mean += v / 8.0;
    for (double v : y.data()) var += (v - mean) * (v - mean) / 8.0;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(CosineDistance, KnownValues) {
  auto cd = [](std::vector<double> u, std::vector<double> v) {
    const fp::Shape s{u.size()};
    return fp::cosine_distance(Tensor::constant(s, u), Tensor::constant(s, v)).item();
  };
  EXPECT_NEAR(cd({1, 2, 3}, {1, 2, 3}), 0.0, 1e-15);
  EXPECT_NEAR(cd({1, 0}, {0, 1}), 1.0, 1e-15);
  EXPECT_NEAR(cd({1, 0}, {-1, 0}), 2.0, 1e-15);
  EXPECT_THROW(cd({0, 0}, {0, 0}), fp::DegenerateInputError);
  EXPECT_EQ(cd({0, 0}, {1, 2}), 1.0);
  EXPECT_THROW(cd({1, 0}, {1, 0, 0}), fp::DimensionError);
}

TEST(CosineDistance, GradientVanishesAtIdenticalVectors) {
  const Tensor u = Tensor::parameter({3}, {1, 2, 3});
  const Tensor v = Tensor::constant({3}, {1, 2, 3});
  fp::backward(fp::cosine_distance(u, v));
  for (double g : u.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(CrossEntropy, KnownValues) {
  EXPECT_NEAR(fp::cross_entropy(Tensor::constant({2}, {0, 0}), 0).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(fp::cross_entropy(Tensor::constant({2}, {10, -10}), 0).item(), 0.0, 1e-8);
  EXPECT_THROW(fp::cross_entropy(Tensor::constant({2}, {0, 0}), 2), fp::IndexError);
}

TEST(CrossEntropy, MatchesSoftmaxLogOracleAndIsNonNegative) {
  fp::Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto z = random_values(rng, 6, 20.0);
    const std::size_t y = fp::uniform_index(rng, 6);
    double s = 0.0;
    for (double v : z) s += std::exp(v);
    const double expect = -std::log(std::exp(z[y]) / s);
    const double got = fp::cross_entropy(Tensor::constant({6}, z), y).item();
    EXPECT_NEAR(got, expect, 1e-10);
    EXPECT_GE(got, 0.0);
  }
}

TEST(Backward, SumGivesOnes) {
  const Tensor x = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  fp::backward(fp::sum(x));
  EXPECT_EQ(x.grad(), std::vector<double>(6, 1.0));
}

TEST(Backward, RejectsNonScalar) {
  const Tensor x = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(fp::backward(fp::scale(x, 2.0)), fp::ContractError);
}

TEST(Backward, ConstantsNeverGetGradientBuffers) {
  const Tensor w = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor x = Tensor::parameter({1, 2}, {0.5, -0.5});
  fp::backward(fp::sum(fp::tanh(fp::matmul(x, w))));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Backward, SharedSubexpressionAccumulates) {
  const Tensor x = Tensor::parameter({2}, {1.5, -2.0});
  fp::backward(fp::sum(fp::mul(x, x)));  // d/dx x^2 = 2x
  EXPECT_EQ(x.grad(), (std::vector<double>{3.0, -4.0}));
}

// Every differentiable op against central differences on random inputs.
TEST(Gradients, EveryOpMatchesFiniteDifferences) {
  fp::Rng rng(11);
  const Tensor w = Tensor::constant({4, 3}, random_values(rng, 12));
  const Tensor row = Tensor::constant({3}, random_values(rng, 3));
  const Tensor other = Tensor::constant({2, 4}, random_values(rng, 8));
  using Build = std::function<Tensor(const Tensor&)>;
  const std::vector<std::pair<const char*, Build>> ops = {
      {"matmul", [&](const Tensor& x) { return fp::sum(fp::tanh(fp::matmul(x, w))); }},
      {"transpose", [&](const Tensor& x) { return fp::sum(fp::tanh(fp::transpose(x))); }},
      {"add/sub/mul",
       [&](const Tensor& x) { return fp::sum(fp::mul(fp::add(x, other), fp::sub(x, other))); }},
      {"scale/mean", [&](const Tensor& x) { return fp::mean(fp::mul(fp::scale(x, -1.7), x)); }},
      {"add_row",
       [&](const Tensor& x) { return fp::sum(fp::tanh(fp::add_row(fp::matmul(x, w), row))); }},
      {"softmax", [&](const Tensor& x) {
         return fp::sum(fp::mul(fp::softmax_rows(x), fp::tanh(x)));
       }},
      {"layer_norm", [&](const Tensor& x) {
         return fp::sum(fp::mul(fp::layer_norm(x), other));
       }},
      {"concat/slice", [&](const Tensor& x) {
         const Tensor c = fp::concat_rows({x, other});
         const Tensor d = fp::concat_cols(std::vector<Tensor>{x, x});
         return fp::add(fp::sum(fp::tanh(fp::slice_rows(c, 1, 2))),
                        fp::sum(fp::tanh(fp::slice_cols(d, 3, 3))));
       }},
      {"reshape", [&](const Tensor& x) {
         return fp::sum(fp::tanh(fp::matmul(fp::reshape(fp::reshape(x, {8}), {2, 4}), fp::slice_cols(w, 0, 2))));
       }},
      {"cosine", [&](const Tensor& x) {
         return fp::cosine_distance(fp::reshape(x, {8}), fp::reshape(other, {8}));
       }},
      {"cross_entropy", [&](const Tensor& x) {
         return fp::cross_entropy(fp::reshape(x, {8}), 3);
       }},
  };
  for (const auto& [name, build] : ops) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      worst = std::max(worst, gradient_error(build, {2, 4}, random_values(rng, 8)));
    }
    EXPECT_LT(worst, 1e-4) << name;
  }
}

TEST(Determinism, SameInputsSameBits) {
  fp::Rng rng(13);
  const auto x = random_values(rng, 12);
  auto run = [&] {
    const Tensor t = Tensor::constant({3, 4}, x);
    return to_vec(fp::softmax_rows(fp::layer_norm(fp::matmul(t, fp::transpose(t)))).data());
  };
  EXPECT_EQ(run(), run());
}

TEST(Values, FiniteOutputsOnFiniteInputs) {
  fp::Rng rng(17);
  const Tensor x = Tensor::constant({3, 3}, random_values(rng, 9, 500.0));
  for (const Tensor& t : {fp::softmax_rows(x), fp::layer_norm(x), fp::tanh(x)})
    for (double v : t.data()) EXPECT_TRUE(std::isfinite(v));
}

}  // namespace
