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
#include <span>
#include <string>
#include <vector>

#include "fedprompt/errors.hpp"
#include "fedprompt/rng.hpp"
#include "fedprompt/tensor.hpp"

namespace fedprompt {

struct EncoderConfig {
  std::size_t raw_dim = 16;
  std::size_t token_count = 4;  // L, class token included
  std::size_t embed_dim = 16;   // D
  std::size_t depth = 1;
  std::size_t head_count = 2;
  std::uint64_t seed = 1;

  void validate() const {
    if (raw_dim == 0 || token_count == 0 || embed_dim == 0 || head_count == 0) {
      throw ConfigError("encoder dimensions must be positive");
    }
    if (embed_dim % head_count != 0) {
      throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                        " is not divisible by head_count " +
                        std::to_string(head_count));
    }
  }
};

// Trainable linear readout over every class of the stream.
struct ClassifierHead {
  std::size_t embed_dim = 0;
  std::size_t class_count = 0;
  std::vector<double> weight;  // embed_dim x class_count
  std::vector<double> bias;    // class_count

  static ClassifierHead init(std::size_t embed_dim, std::size_t class_count,
                             std::uint64_t seed) {
    ClassifierHead h;
    h.embed_dim = embed_dim;
    h.class_count = class_count;
    Rng rng(derive_seed(seed, {0x68656164}));
    const double a = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    h.weight.resize(embed_dim * class_count);
    for (auto& w : h.weight) w = uniform(rng, -a, a);
    h.bias.assign(class_count, 0.0);
    return h;
  }
};

// Graph handles for a head: constants for evaluation, leaves for training.
struct HeadTensors {
  Tensor weight;
  Tensor bias;

  static HeadTensors constants(const ClassifierHead& h) {
    return {Tensor::constant({h.embed_dim, h.class_count}, h.weight),
            Tensor::constant({h.class_count}, h.bias)};
  }
  static HeadTensors parameters(const ClassifierHead& h) {
    return {Tensor::parameter({h.embed_dim, h.class_count}, h.weight),
            Tensor::parameter({h.class_count}, h.bias)};
  }
};

// Fixed random transformer standing in for a pre-trained backbone.
//
// embed() maps a raw vector to L tokens through a frozen linear projection
// plus positional constants; token 0 is the class token. Each block is
// multi-head attention followed by a layer-normalised tanh MLP, both residual.
// Nothing here is ever trained, and all weights are constants in the
// autodiff graph.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, {0x656e63}));
    const std::size_t r = cfg_.raw_dim, l = cfg_.token_count, d = cfg_.embed_dim;
    const std::size_t dh = d / cfg_.head_count, ff = 2 * d;

    // Token coordinates come out on the scale of a freshly initialised prompt
    // (about 1/sqrt(D)); much larger tokens drown prompts in the attention.
    const double es = 1.0 / std::sqrt(static_cast<double>(d));
    projection_ = gaussian({r, l * d}, es / std::sqrt(static_cast<double>(r)), rng);
    positional_ = gaussian({l, d}, 0.5 * es, rng);
    for (std::size_t b = 0; b < cfg_.depth; ++b) {
      Block blk;
      const double s = 1.0 / std::sqrt(static_cast<double>(d));
      for (std::size_t h = 0; h < cfg_.head_count; ++h) {
        blk.wq.push_back(gaussian({d, dh}, s, rng));
        blk.wk.push_back(gaussian({d, dh}, s, rng));
        blk.wv.push_back(gaussian({d, dh}, s, rng));
      }
      blk.wo = gaussian({d, d}, s, rng);
      blk.w1 = gaussian({d, ff}, s, rng);
      blk.b1 = gaussian({ff}, 0.1, rng);
      blk.w2 = gaussian({ff, d}, 1.0 / std::sqrt(static_cast<double>(ff)), rng);
      blocks_.push_back(std::move(blk));
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  const Tensor& positional() const { return positional_; }

  Tensor embed(std::span<const double> input) const {
    if (input.size() != cfg_.raw_dim) {
      throw DimensionError("embed: input has " + std::to_string(input.size()) +
                           " values, encoder expects " + std::to_string(cfg_.raw_dim));
    }
    const std::size_t r = cfg_.raw_dim, l = cfg_.token_count, d = cfg_.embed_dim;
    std::vector<double> tokens(positional_.data().begin(), positional_.data().end());
    const auto p = projection_.data();
    for (std::size_t i = 0; i < r; ++i) {
      const double x = input[i];
      if (x == 0.0) continue;
      const double* row = p.data() + i * l * d;
      for (std::size_t j = 0; j < l * d; ++j) tokens[j] += x * row[j];
    }
    return Tensor::constant({l, d}, std::move(tokens));
  }

  // Class-token row of embed(input).
  std::vector<double> query_features(std::span<const double> input) const {
    const Tensor e = embed(input);
    return {e.data().begin(), e.data().begin() + static_cast<std::ptrdiff_t>(cfg_.embed_dim)};
  }

  // Runs the stack over prompt-extended tokens and reads logits from the
  // class token of the embedded input, i.e. row (rows - L).
  Tensor forward_with_prompts(const Tensor& extended, const HeadTensors& head) const {
    const std::size_t l = cfg_.token_count, d = cfg_.embed_dim;
    if (extended.rank() != 2 || extended.cols() != d || extended.rows() < l) {
      throw DimensionError("forward_with_prompts: got " + shape_string(extended.shape()) +
                           ", need (prompts + " + std::to_string(l) + ") x " +
                           std::to_string(d));
    }
    if (head.weight.rank() != 2 || head.weight.rows() != d ||
        head.bias.numel() != head.weight.cols()) {
      throw DimensionError("forward_with_prompts: head shape does not match encoder");
    }
    const std::size_t readout = extended.rows() - l;
    const double attn_scale =
        1.0 / std::sqrt(static_cast<double>(d / cfg_.head_count));

    Tensor h = extended;
    for (const auto& blk : blocks_) {
      // Attention sees raw tokens so prompt magnitude matters; the MLP is
      // pre-normalised.
      const Tensor& a = h;
      std::vector<Tensor> heads;
      heads.reserve(blk.wq.size());
      for (std::size_t k = 0; k < blk.wq.size(); ++k) {
        const Tensor q = matmul(a, blk.wq[k]);
        const Tensor key = matmul(a, blk.wk[k]);
        const Tensor v = matmul(a, blk.wv[k]);
        const Tensor att = softmax_rows(scale(matmul(q, transpose(key)), attn_scale));
        heads.push_back(matmul(att, v));
      }
      h = add(h, matmul(concat_cols(heads), blk.wo));
      const Tensor m = layer_norm(h);
      h = add(h, matmul(tanh(add_row(matmul(m, blk.w1), blk.b1)), blk.w2));
    }
    const Tensor cls = slice_rows(h, readout, 1);
    const Tensor logits = add_row(matmul(cls, head.weight), head.bias);
    return reshape(logits, {head.bias.numel()});
  }

  // Every frozen weight, flattened in a fixed order.
  std::vector<double> flat_weights() const {
    std::vector<double> out;
    auto put = [&out](const Tensor& t) {
      out.insert(out.end(), t.data().begin(), t.data().end());
    };
    put(projection_);
    put(positional_);
    for (const auto& b : blocks_) {
      for (const auto& t : b.wq) put(t);
      for (const auto& t : b.wk) put(t);
      for (const auto& t : b.wv) put(t);
      put(b.wo);
      put(b.w1);
      put(b.b1);
      put(b.w2);
    }
    return out;
  }

  // True if any frozen weight tensor carries a gradient buffer.
  bool any_weight_has_grad() const {
    bool any = projection_.has_grad() || positional_.has_grad();
    for (const auto& b : blocks_) {
      for (const auto& t : b.wq) any = any || t.has_grad();
      for (const auto& t : b.wk) any = any || t.has_grad();
      for (const auto& t : b.wv) any = any || t.has_grad();
      any = any || b.wo.has_grad() || b.w1.has_grad() || b.b1.has_grad() ||
            b.w2.has_grad();
    }
    return any;
  }

 private:
  struct Block {
    std::vector<Tensor> wq, wk, wv;
    Tensor wo, w1, b1, w2;
  };

  static Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * standard_normal(rng);
    return Tensor::constant(std::move(shape), std::move(v));
  }

  EncoderConfig cfg_;
  Tensor projection_;  // raw_dim x (L * D)
  Tensor positional_;  // L x D
  std::vector<Block> blocks_;
};

}  // namespace fedprompt
