/* Copyright 2026 The moelora Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "moelora/errors.hpp"
#include "moelora/model.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"
#include "moelora/transformer.hpp"

using namespace moelora;

namespace {

Tensor rand_tensor(Shape shape, std::uint64_t key, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), stddev, key);
}

AttentionLoraSet random_attention(int d, int rank, std::uint64_t key, bool nonzero_up) {
  AttentionLoraSet a;
  for (int p = 0; p < 4; ++p) {
    a.base[p] = rand_tensor({d, d}, hash_key({key, 1, static_cast<std::uint64_t>(p)}), 0.3);
    a.lora[p] = LoraAdapter::init(d, d, rank, 8.0, hash_key({key, 2, static_cast<std::uint64_t>(p)}));
    if (nonzero_up) a.lora[p].up = rand_tensor({d, rank}, hash_key({key, 3, static_cast<std::uint64_t>(p)}), 0.1);
  }
  return a;
}

// W + (alpha/r) up down, as a dense [d, d] matrix.
std::vector<double> effective_weight(const AttentionLoraSet& a, int p, int d) {
  const auto& w = a.base[p].data();
  const auto& l = a.lora[p];
  std::vector<double> out(w.begin(), w.end());
  if (!a.enabled) return out;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int r = 0; r < l.rank; ++r) acc += l.up.at(i * l.rank + r) * l.down.at(r * d + j);
      out[i * d + j] += l.scale() * acc;
    }
  }
  return out;
}

// Scalar-loop causal multi-head attention.
std::vector<double> attention_oracle(const Tensor& x, const AttentionLoraSet& a, int heads) {
  const auto B = x.size(0), T = x.size(1), d = x.size(2);
  const int hd = static_cast<int>(d) / heads;
  std::vector<std::vector<double>> w(4);
  for (int p = 0; p < 4; ++p) w[p] = effective_weight(a, p, static_cast<int>(d));
  auto proj = [&](int p, std::int64_t b, std::int64_t t, std::int64_t i, const std::vector<double>& src) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < d; ++j) acc += src[(b * T + t) * d + j] * w[p][i * d + j];
    return acc;
  };
  std::vector<double> xs(x.data().begin(), x.data().end());
  std::vector<double> q(xs.size()), k(xs.size()), v(xs.size()), ctx(xs.size(), 0.0), out(xs.size());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t i = 0; i < d; ++i) {
        q[(b * T + t) * d + i] = proj(0, b, t, i, xs);
        k[(b * T + t) * d + i] = proj(1, b, t, i, xs);
        v[(b * T + t) * d + i] = proj(2, b, t, i, xs);
      }
  for (std::int64_t b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (std::int64_t t = 0; t < T; ++t) {
        std::vector<double> s(t + 1);
        double mx = -INFINITY;
        for (std::int64_t u = 0; u <= t; ++u) {
          double acc = 0.0;
          for (int c = 0; c < hd; ++c) acc += q[(b * T + t) * d + h * hd + c] * k[(b * T + u) * d + h * hd + c];
          s[u] = acc / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[u]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::int64_t u = 0; u <= t; ++u)
          for (int c = 0; c < hd; ++c) ctx[(b * T + t) * d + h * hd + c] += s[u] / z * v[(b * T + u) * d + h * hd + c];
      }
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t i = 0; i < d; ++i) out[(b * T + t) * d + i] = proj(3, b, t, i, ctx);
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.vocab_size = 24;
  c.hidden_dim = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_inner_dim = 32;
  c.max_seq_len = 12;
  c.seed = 3;
  return c;
}

MoeConfig tiny_moe() { return MoeConfig{}; }

ContrastiveConfig tiny_contrastive() {
  ContrastiveConfig c;
  c.proj_dim = 16;
  c.queue_size = 4;
  return c;
}

TokenBatch random_tokens(std::int64_t b, std::int64_t t, int vocab, std::uint64_t key) {
  CounterRng rng(key);
  TokenBatch tb{b, t, {}};
  for (std::int64_t i = 0; i < b * t; ++i) tb.ids.push_back(static_cast<std::int32_t>(rng.below(vocab)));
  return tb;
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig c = tiny_model();
  CHECK_NOTHROW(c.validate());
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_model();
  c.vocab_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_model();
  c.attn_lora_layers = {true};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("lora adapter init: down ~ N(0, 1/r), up zero") {
  auto a = LoraAdapter::init(64, 32, 4, 8.0, 7);
  CHECK(a.down.shape() == Shape{4, 64});
  CHECK(a.up.shape() == Shape{32, 4});
  CHECK(a.scale() == 2.0);
  CHECK(a.down.requires_grad());
  CHECK(a.up.requires_grad());
  double sq = 0.0;
  for (double v : a.down.data()) sq += v * v;
  CHECK(sq / 256.0 == doctest::Approx(0.25).epsilon(0.25));
  for (double v : a.up.data()) CHECK(v == 0.0);
}

TEST_CASE("attention matches a scalar-loop oracle with adapters active") {
  const int d = 8;
  auto attn = random_attention(d, 2, 11, true);
  auto x = rand_tensor({2, 5, d}, 12);
  auto out = attention_forward(x, attn, 2, 16);
  CHECK(max_abs_diff(out.data(), attention_oracle(x, attn, 2)) < 1e-12);
  attn.enabled = false;
  out = attention_forward(x, attn, 2, 16);
  CHECK(max_abs_diff(out.data(), attention_oracle(x, attn, 2)) < 1e-12);
}

TEST_CASE("zero adapter ups reproduce the base attention") {
  const int d = 8;
  auto attn = random_attention(d, 4, 21, false);
  auto plain = attn;
  plain.enabled = false;
  auto x = rand_tensor({3, 6, d}, 22);
  CHECK(max_abs_diff(attention_forward(x, attn, 4, 8).data(), attention_forward(x, plain, 4, 8).data()) <= 1e-12);
}

TEST_CASE("single position, identity projections: output equals input") {
  const int d = 4;
  AttentionLoraSet a;
  std::vector<double> eye(d * d, 0.0);
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  for (int p = 0; p < 4; ++p) {
    a.base[p] = Tensor::from_data({d, d}, eye);
    a.lora[p] = LoraAdapter::init(d, d, 2, 4.0, p);
  }
  auto x = Tensor::from_data({1, 1, d}, {0.5, -1.0, 2.0, 0.25});
  auto out = attention_forward(x, a, 1, 4);
  CHECK(max_abs_diff(out.data(), x.data()) < 1e-15);
}

TEST_CASE("attention is causal") {
  const int d = 8;
  auto attn = random_attention(d, 2, 31, true);
  auto x = rand_tensor({1, 6, d}, 32);
  auto y = x.clone();
  for (int i = 0; i < d; ++i) y.mutable_data()[4 * d + i] += 3.0;
  auto ox = attention_forward(x, attn, 2, 8);
  auto oy = attention_forward(y, attn, 2, 8);
  for (int i = 0; i < 4 * d; ++i) CHECK(ox.at(i) == oy.at(i));
  bool changed = false;
  for (int i = 4 * d; i < 6 * d; ++i) changed |= ox.at(i) != oy.at(i);
  CHECK(changed);
}

TEST_CASE("sequence longer than max_seq_len is a config error") {
  auto attn = random_attention(4, 2, 1, false);
  CHECK_THROWS_AS(attention_forward(rand_tensor({1, 9, 4}, 2), attn, 1, 8), ConfigError);
}

TEST_CASE("base mlp: hand-evaluated silu and zero weights") {
  BaseMlp m{Tensor::from_data({1, 1}, {2.0}), Tensor::from_data({1, 1}, {3.0})};
  auto out = base_mlp_forward(m, Tensor::from_data({1, 1, 1}, {1.0}));
  const double expected = 3.0 * (2.0 / (1.0 + std::exp(-2.0)));
  CHECK(out.item() == doctest::Approx(expected).epsilon(1e-15));
  CHECK(out.item() == doctest::Approx(5.2848).epsilon(1e-4));
  BaseMlp z{Tensor::zeros({6, 4}), Tensor::zeros({4, 6})};
  const auto zeroed = base_mlp_forward(z, rand_tensor({2, 3, 4}, 5));
  for (double v : zeroed.data()) CHECK(v == 0.0);
}

TEST_CASE("lm_forward shape, determinism and input errors") {
  MoeLoraModel model(tiny_model(), tiny_moe(), tiny_contrastive());
  model.randomize_adapter_ups(0.05, 9);
  auto tokens = random_tokens(3, 7, 24, 4);
  auto a = model.lm_forward(tokens);
  CHECK(a.shape() == Shape{3, 7, 24});
  auto b = model.lm_forward(tokens);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(std::isfinite(a.at(i)));
    CHECK(a.at(i) == b.at(i));
  }
  tokens.ids[5] = 24;
  CHECK_THROWS_AS(model.lm_forward(tokens), InputError);
  tokens.ids[5] = -1;
  CHECK_THROWS_AS(model.lm_forward(tokens), InputError);
  CHECK_THROWS_AS(model.lm_forward(random_tokens(1, 13, 24, 1)), ConfigError);
}

TEST_CASE("zero-adapter identity against the frozen base model") {
  MoeLoraModel model(tiny_model(), tiny_moe(), tiny_contrastive());
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    auto tokens = random_tokens(2, 9, 24, 100 + trial);
    const auto base = model.base_lm_forward(tokens);
    ForwardOptions off;
    off.routing_enabled = false;
    CHECK(max_abs_diff(model.forward(tokens, off).logits.data(), base.data()) <= 1e-10);
    CHECK(max_abs_diff(model.lm_forward(tokens).data(), base.data()) <= 1e-10);
  }
  model.randomize_adapter_ups(0.05, 1);
  auto tokens = random_tokens(2, 9, 24, 7);
  CHECK(max_abs_diff(model.lm_forward(tokens).data(), model.base_lm_forward(tokens).data()) > 1e-6);
  model.zero_adapter_ups();
  CHECK(max_abs_diff(model.lm_forward(tokens).data(), model.base_lm_forward(tokens).data()) <= 1e-10);
}

TEST_CASE("model logits are causal") {
  MoeLoraModel model(tiny_model(), tiny_moe(), tiny_contrastive());
  model.randomize_adapter_ups(0.1, 2);
  auto tokens = random_tokens(1, 10, 24, 8);
  auto changed = tokens;
  changed.ids[6] = (changed.ids[6] + 5) % 24;
  auto a = model.lm_forward(tokens);
  auto b = model.lm_forward(changed);
  for (std::int64_t i = 0; i < 6 * 24; ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("parameter partition is exact and disjoint") {
  ModelConfig cfg = tiny_model();
  cfg.attn_lora_layers = {true, false};
  MoeLoraModel model(cfg, tiny_moe(), tiny_contrastive());
  std::set<const void*> trainable, frozen;
  for (const auto& p : model.trainable_parameters()) {
    CHECK(p.tensor.requires_grad());
    trainable.insert(p.tensor.node().get());
  }
  for (const auto& p : model.frozen_parameters()) {
    CHECK_FALSE(p.tensor.requires_grad());
    frozen.insert(p.tensor.node().get());
  }
  for (const auto* t : trainable) CHECK(frozen.count(t) == 0);
  CHECK(model.parameters().size() == trainable.size() + frozen.size());
  // per layer: 8 attention adapter tensors, 2 per expert, router, 4 head tensors
  CHECK(trainable.size() == 2 * (8 + 2 * 4 + 1 + 4));
  CHECK(frozen.size() == 3 + 2 * (4 + 2));
}

TEST_CASE("attention adapters can be disabled per layer") {
  ModelConfig cfg = tiny_model();
  cfg.attn_lora_layers = {false, false};
  MoeLoraModel model(cfg, tiny_moe(), tiny_contrastive());
  for (auto& layer : model.layers()) {
    for (auto& a : layer.attn.lora) {
      auto up = a.up.mutable_data();
      for (auto& v : up) v = 1.0;
    }
  }
  auto tokens = random_tokens(1, 5, 24, 3);
  ForwardOptions off;
  off.routing_enabled = false;
  CHECK(max_abs_diff(model.forward(tokens, off).logits.data(), model.base_lm_forward(tokens).data()) <= 1e-12);
}
