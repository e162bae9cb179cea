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
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fedprompt/errors.hpp"

namespace fedprompt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  // Empty until backward reaches this node. Never allocated for nodes that
  // do not require a gradient.
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  double grad_at(std::size_t i) const { return grad.empty() ? 0.0 : grad[i]; }
};

}  // namespace detail

// Dense row-major tensor of doubles recording the operations that produced it.
//
// Values are immutable once built. Gradients flow backwards through the
// recorded graph to leaves created with Tensor::parameter; constants (frozen
// weights, embedded inputs) never receive a gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data) {
    return leaf(std::move(shape), std::move(data), false);
  }
  static Tensor parameter(Shape shape, std::vector<double> data) {
    return leaf(std::move(shape), std::move(data), true);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v) { return constant({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Rank-1 tensors behave as a single row.
  std::size_t rows() const {
    return rank() >= 2 ? node_->shape[0] : 1;
  }
  std::size_t cols() const {
    return rank() == 0 ? 1 : node_->shape.back();
  }

  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->data[r * cols() + c];
  }
  double item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_string(shape()));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled view when the node required a gradient but backward never
  // reached it; throws for nodes that cannot carry one.
  std::vector<double> grad() const {
    if (!node_->requires_grad) {
      throw ContractError("tensor does not require grad");
    }
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }

  // Internal: used by operations to build graph nodes.
  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  static Tensor leaf(Shape shape, std::vector<double> data, bool rg) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_string(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = rg;
    return from_node(std::move(n));
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds a result node. The backward closure is attached only when some parent
// needs a gradient, so graphs over constants are never recorded.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::vector<Tensor> parents,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor::from_node(std::move(n));
}

inline void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

inline void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() > 2) {
    throw DimensionError(std::string(op) + ": expected rank <= 2, got " +
                         shape_string(t.shape()));
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss.
inline void backward(const Tensor& loss) {
  detail::require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(0, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail::require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " +
                         shape_string(shape));
  }
  auto pa = a.node();
  return detail::make_result(std::move(shape), pa->data, {a}, [pa](detail::Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->accumulate(i, self.grad[i]);
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = bd.data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  auto pa = a.node(), pb = b.node();
  return detail::make_result({n, m}, std::move(out), {a, b},
                             [pa, pb, n, k, m](detail::Node& self) {
    const auto& g = self.grad;
    if (pa->requires_grad) {
      if (pa->grad.empty()) pa->grad.assign(pa->data.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * pb->data[p * m + j];
          pa->grad[i * k + p] += s;
        }
    }
    if (pb->requires_grad) {
      if (pb->grad.empty()) pb->grad.assign(pb->data.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa->data[i * k + p];
          for (std::size_t j = 0; j < m; ++j) pb->grad[p * m + j] += av * g[i * m + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.data()[i * m + j];
  auto pa = a.node();
  return detail::make_result({m, n}, std::move(out), {a}, [pa, n, m](detail::Node& self) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) pa->accumulate(i * m + j, self.grad[j * n + i]);
  });
}

namespace detail {

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op,
                          Fwd fwd, GradA ga, GradB gb) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a[i], b[i]);
  auto pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb, ga, gb](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (pa->requires_grad) pa->accumulate(i, ga(g, pa->data[i], pb->data[i]));
      if (pb->requires_grad) pb->accumulate(i, gb(g, pa->data[i], pb->data[i]));
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

inline Tensor scale(const Tensor& a, double s) {
  detail::require_defined(a, "scale");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  auto pa = a.node();
  return detail::make_result(a.shape(), std::move(out), {a}, [pa, s](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->accumulate(i, s * self.grad[i]);
  });
}

// Adds a length-cols vector to every row of a matrix.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::require_matrix(a, "add_row");
  detail::require_defined(row, "add_row");
  const std::size_t n = a.rows(), m = a.cols();
  if (row.numel() != m) {
    throw DimensionError("add_row: row of " + std::to_string(row.numel()) +
                         " values for " + std::to_string(m) + " columns");
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += row[j];
  auto pa = a.node(), pr = row.node();
  return detail::make_result(a.shape(), std::move(out), {a, row},
                             [pa, pr, n, m](detail::Node& self) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = self.grad[i * m + j];
        if (pa->requires_grad) pa->accumulate(i * m + j, g);
        if (pr->requires_grad) pr->accumulate(j, g);
      }
  });
}

inline Tensor tanh(const Tensor& a) {
  detail::require_defined(a, "tanh");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto pa = a.node();
  auto y = out;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [pa, y = std::move(y)](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa->accumulate(i, self.grad[i] * (1.0 - y[i] * y[i]));
  });
}

inline Tensor sum(const Tensor& a) {
  detail::require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto pa = a.node();
  return detail::make_result({}, {s}, {a}, [pa](detail::Node& self) {
    for (std::size_t i = 0; i < pa->data.size(); ++i) pa->accumulate(i, self.grad[0]);
  });
}

inline Tensor mean(const Tensor& a) {
  detail::require_defined(a, "mean");
  if (a.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Softmax along the last axis, max-subtracted.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require_defined(a, "softmax_rows");
  if (a.rank() < 1) throw DimensionError("softmax_rows needs rank >= 1");
  const std::size_t m = a.cols();
  const std::size_t n = m == 0 ? 0 : a.numel() / m;
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = a.data().data() + i * m;
    double* y = out.data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[j] /= z;
  }
  auto pa = a.node();
  auto y = out;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [pa, y = std::move(y), n, m](detail::Node& self) {
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        pa->accumulate(i * m + j, y[i * m + j] * (self.grad[i * m + j] - dot));
    }
  });
}

// Normalizes each row (last axis) to zero mean and unit variance, no affine.
inline Tensor layer_norm(const Tensor& a, double eps = 1e-5) {
  detail::require_defined(a, "layer_norm");
  const std::size_t m = a.cols();
  if (m == 0) throw DimensionError("layer_norm over empty axis");
  const std::size_t n = a.numel() / m;
  std::vector<double> out(a.numel());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = a.data().data() + i * m;
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += x[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (x[j] - mu) * inv_std[i];
  }
  auto pa = a.node();
  auto y = out;
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [pa, y = std::move(y), inv_std = std::move(inv_std), n, m](detail::Node& self) {
        const double dm = static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i) {
          double g_mean = 0.0, gy_mean = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            g_mean += self.grad[i * m + j];
            gy_mean += self.grad[i * m + j] * y[i * m + j];
          }
          g_mean /= dm;
          gy_mean /= dm;
          for (std::size_t j = 0; j < m; ++j) {
            const double gx = inv_std[i] * (self.grad[i * m + j] - g_mean -
                                            y[i * m + j] * gy_mean);
            pa->accumulate(i * m + j, gx);
          }
        }
      });
}

// Stacks matrices with equal column count; undefined entries are skipped.
inline Tensor concat_rows(std::span<const Tensor> parts) {
  std::vector<Tensor> live;
  for (const auto& p : parts) {
    if (!p.defined()) continue;
    detail::require_matrix(p, "concat_rows");
    if (p.numel() == 0) continue;
    live.push_back(p);
  }
  if (live.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t m = live.front().cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : live) {
    if (p.cols() != m) {
      throw DimensionError("concat_rows: column count " + std::to_string(p.cols()) +
                           " vs " + std::to_string(m));
    }
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : live) nodes.push_back(p.node());
  return detail::make_result({rows, m}, std::move(out), live,
                             [nodes = std::move(nodes)](detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& p : nodes) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < p->data.size(); ++i)
          p->accumulate(i, self.grad[offset + i]);
      offset += p->data.size();
    }
  });
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: row count mismatch");
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t m = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * total + off + j] = p.data()[i * m + j];
    off += m;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result({n, total}, std::move(out),
                             std::vector<Tensor>(parts.begin(), parts.end()),
                             [nodes = std::move(nodes), n, total](detail::Node& self) {
    std::size_t off = 0;
    for (const auto& p : nodes) {
      const std::size_t m = p->data.size() / n;
      if (p->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j)
            p->accumulate(i * m + j, self.grad[i * total + off + j]);
      off += m;
    }
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_rows");
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " +
                         std::to_string(a.rows()) + " rows");
  }
  const std::size_t m = a.cols();
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * m),
                          a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * m));
  auto pa = a.node();
  return detail::make_result({count, m}, std::move(out), {a},
                             [pa, begin, m](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa->accumulate(begin * m + i, self.grad[i]);
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_cols");
  const std::size_t n = a.rows(), m = a.cols();
  if (begin + count > m) throw DimensionError("slice_cols out of range");
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.data()[i * m + begin + j];
  auto pa = a.node();
  return detail::make_result({n, count}, std::move(out), {a},
                             [pa, begin, n, m, count](detail::Node& self) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j)
        pa->accumulate(i * m + begin + j, self.grad[i * count + j]);
  });
}

// 1 - cos(u, v). Both arguments are read as flat vectors.
//
// When exactly one argument is zero the similarity is taken as 0 (distance 1)
// with a zero gradient; two zero vectors are rejected.
inline Tensor cosine_distance(const Tensor& u, const Tensor& v) {
  detail::require_defined(u, "cosine_distance");
  detail::require_defined(v, "cosine_distance");
  if (u.numel() != v.numel()) {
    throw DimensionError("cosine_distance: lengths " + std::to_string(u.numel()) +
                         " vs " + std::to_string(v.numel()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 && vv == 0.0) {
    throw DegenerateInputError("cosine_distance of two zero vectors");
  }
  if (uu == 0.0 || vv == 0.0) {
    return detail::make_result({}, {1.0}, {u, v}, [](detail::Node&) {});
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double sim = dot / (nu * nv);
  auto pu = u.node(), pv = v.node();
  return detail::make_result({}, {1.0 - sim}, {u, v},
                             [pu, pv, nu, nv, sim](detail::Node& self) {
    const double g = self.grad[0];
    const std::size_t n = pu->data.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double ui = pu->data[i], vi = pv->data[i];
      if (pu->requires_grad)
        pu->accumulate(i, -g * (vi / (nu * nv) - sim * ui / (nu * nu)));
      if (pv->requires_grad)
        pv->accumulate(i, -g * (ui / (nu * nv) - sim * vi / (nv * nv)));
    }
  });
}

// -log softmax(logits)[label]; logits read as a flat vector.
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  detail::require_defined(logits, "cross_entropy");
  const std::size_t c = logits.numel();
  if (label >= c) {
    throw IndexError("cross_entropy label " + std::to_string(label) +
                     " out of range for " + std::to_string(c) + " logits");
  }
  const auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  const double loss = std::max(0.0, lse - z[label]);
  auto pl = logits.node();
  return detail::make_result({}, {loss}, {logits},
                             [pl, label, lse](detail::Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < pl->data.size(); ++i) {
      const double p = std::exp(pl->data[i] - lse);
      pl->accumulate(i, g * (p - (i == label ? 1.0 : 0.0)));
    }
  });
}

}  // namespace fedprompt
