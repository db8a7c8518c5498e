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

#include "moelora/transformer.hpp"

#include <cmath>
#include <string>

#include "moelora/errors.hpp"
#include "moelora/ops.hpp"

namespace moelora {

void ModelConfig::validate() const {
  if (vocab_size < 1 || hidden_dim < 1 || num_layers < 1 || num_heads < 1 || mlp_inner_dim < 1 ||
      max_seq_len < 1 || attn_rank < 1) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(attn_alpha > 0.0) || !std::isfinite(attn_alpha)) throw ConfigError("attn_alpha must be positive");
  if (!(init_std >= 0.0)) throw ConfigError("init_std must be non-negative");
  if (!(output_init_std >= 0.0)) throw ConfigError("output_init_std must be non-negative");
  if (!attn_lora_layers.empty() && static_cast<int>(attn_lora_layers.size()) != num_layers) {
    throw ConfigError("attn_lora_layers must have num_layers entries");
  }
}

LoraAdapter LoraAdapter::init(int in_dim, int out_dim, int rank, double alpha, std::uint64_t key) {
  LoraAdapter a;
  a.rank = rank;
  a.alpha = alpha;
  a.down = Tensor::randn({rank, in_dim}, 1.0 / std::sqrt(static_cast<double>(rank)), key, true);
  a.up = Tensor::zeros({out_dim, rank}, true);
  return a;
}

Tensor lora_delta(const LoraAdapter& adapter, const Tensor& x) {
  return scale(linear(linear(x, adapter.down), adapter.up), adapter.scale());
}

Tensor AttentionLoraSet::project(Proj which, const Tensor& x) const {
  const auto i = static_cast<size_t>(which);
  Tensor y = linear(x, base[i]);
  if (enabled) y = add(y, lora_delta(lora[i], x));
  return y;
}

Tensor attention_forward(const Tensor& x, const AttentionLoraSet& attn, int num_heads,
                         int max_seq_len) {
  if (x.dim() != 3) throw ShapeError("attention_forward: expects [B, T, d], got " + shape_str(x.shape()));
  const std::int64_t b = x.size(0), t = x.size(1), d = x.size(2);
  if (t > max_seq_len) {
    throw ConfigError("sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len));
  }
  if (d % num_heads != 0) throw ConfigError("hidden dim not divisible by num_heads");
  const std::int64_t hd = d / num_heads;
  auto heads = [&](const Tensor& y) { return permute(reshape(y, {b, t, num_heads, hd}), {0, 2, 1, 3}); };
  Tensor q = heads(attn.project(Proj::kQuery, x));
  Tensor k = heads(attn.project(Proj::kKey, x));
  Tensor v = heads(attn.project(Proj::kValue, x));
  Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor probs = softmax_last_dim(causal_mask(scores));
  Tensor ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {b, t, d});
  return attn.project(Proj::kOutput, ctx);
}

Tensor base_mlp_forward(const BaseMlp& mlp, const Tensor& x) {
  return linear(silu(linear(x, mlp.up)), mlp.down);
}

}  // namespace moelora
