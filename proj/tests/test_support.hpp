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


// Small helpers shared by the unit tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fedprompt/rng.hpp"
#include "fedprompt/tensor.hpp"

namespace fedprompt::testing {

inline std::vector<double> random_values(Rng& rng, std::size_t n, double a = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -a, a);
  return v;
}

// Central differences of a scalar function of x.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double fp = f(x);
    x[i] = keep - step;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / d);
  }
  return worst;
}

// Analytic gradient of build(x) with respect to a parameter leaf holding x.
inline std::vector<double> analytic_grad(const std::function<Tensor(const Tensor&)>& build,
                                         const Shape& shape, const std::vector<double>& x) {
  const Tensor leaf = Tensor::parameter(shape, x);
  backward(build(leaf));
  return leaf.grad();
}

inline double value_at(const std::function<Tensor(const Tensor&)>& build, const Shape& shape,
                       const std::vector<double>& x) {
  return build(Tensor::constant(shape, x)).item();
}

// Relative error between analytic and numeric gradients of build at x.
inline double gradient_error(const std::function<Tensor(const Tensor&)>& build, const Shape& shape,
                             const std::vector<double>& x) {
  const auto a = analytic_grad(build, shape, x);
  const auto n = numeric_grad([&](const std::vector<double>& v) { return value_at(build, shape, v); },
                              x);
  return max_rel_error(a, n);
}

}  // namespace fedprompt::testing
