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

#include "moelora/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "moelora/errors.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"

namespace moelora {

void MoeConfig::validate() const {
  if (num_experts < 1) throw ConfigError("num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) {
    throw ConfigError("top_k must satisfy 1 <= k <= num_experts, got k=" + std::to_string(top_k) +
                      " n=" + std::to_string(num_experts));
  }
  if (rank < 1) throw ConfigError("expert rank must be >= 1");
  if (!(lora_alpha > 0.0) || !std::isfinite(lora_alpha)) throw ConfigError("lora_alpha must be positive");
  if (!(noise.stddev >= 0.0)) throw ConfigError("router noise stddev must be >= 0");
}

int RouterOutput::argmax_expert(std::int64_t token) const {
  const auto g = gates.data().subspan(token * num_experts, num_experts);
  int best = 0;
  for (int i = 1; i < num_experts; ++i) {
    if (g[i] > g[best]) best = i;
  }
  return best;
}

Tensor lora_expert_forward(const LoraExpert& expert, const Tensor& x) {
  const std::int64_t d = x.size(-1);
  if (expert.down.dim() != 2 || expert.up.dim() != 2 || expert.down.size(1) != d ||
      expert.up.size(1) != expert.down.size(0) || expert.down.size(0) != expert.rank) {
    throw ShapeError("lora expert with down " + shape_str(expert.down.shape()) + " and up " +
                     shape_str(expert.up.shape()) + " cannot take input " + shape_str(x.shape()));
  }
  return lora_delta(expert, x);
}

std::vector<std::int32_t> top_k_indices(const double* values, int n, int k) {
  std::vector<std::int32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [values](std::int32_t a, std::int32_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

RouterOutput route_from_logits(const Tensor& logits, int top_k) {
  const int n = static_cast<int>(logits.size(-1));
  if (top_k < 1 || top_k > n) throw ConfigError("top_k out of range for router");
  const std::int64_t tokens = logits.numel() / n;
  RouterOutput out;
  out.logits = logits;
  out.tokens = tokens;
  out.num_experts = n;
  out.top_k = top_k;
  out.selected.resize(tokens * top_k);
  std::vector<std::uint8_t> masked(logits.numel(), 1);
  const double* l = logits.data().data();
  for (std::int64_t t = 0; t < tokens; ++t) {
    const auto top = top_k_indices(l + t * n, n, top_k);
    for (int j = 0; j < top_k; ++j) {
      out.selected[t * top_k + j] = top[j];
      masked[t * n + top[j]] = 0;
    }
  }
  // exp(-inf) is exactly zero, so unselected gates are exact zeros and pass
  // no gradient back to their logits.
  out.gates = softmax_last_dim(masked_fill(logits, masked, -std::numeric_limits<double>::infinity()));
  return out;
}

RouterOutput route(const Router& router, const Tensor& x, std::optional<std::uint64_t> noise_key) {
  if (router.weight.dim() != 2 || router.weight.size(0) != router.num_experts) {
    throw ShapeError("router weight " + shape_str(router.weight.shape()) + " does not match " +
                     std::to_string(router.num_experts) + " experts");
  }
  Tensor logits = linear(x, router.weight);
  if (noise_key && router.noise.stddev > 0.0) {
    logits = add(logits, Tensor::randn(logits.shape(), router.noise.stddev, *noise_key));
  }
  return route_from_logits(logits, router.top_k);
}

MoeOutput moe_layer_forward(const Tensor& x, const std::vector<LoraExpert>& experts,
                            const Router& router, const BaseMlp& shared,
                            std::optional<std::uint64_t> noise_key, bool routing_enabled) {
  if (static_cast<int>(experts.size()) != router.num_experts) {
    throw ConfigError("moe layer has " + std::to_string(experts.size()) + " experts but router expects " +
                      std::to_string(router.num_experts));
  }
  MoeOutput out;
  out.h_shared = base_mlp_forward(shared, x);
  out.router = route(router, x, noise_key);
  if (!routing_enabled) {
    out.h_route = Tensor::zeros(x.shape());
    out.h_final = out.h_shared;
    return out;
  }
  // Dense evaluation with masked gates; unselected experts are multiplied by
  // exact zeros.
  Tensor acc;
  for (int i = 0; i < router.num_experts; ++i) {
    Tensor term = mul(slice_last(out.router.gates, i), lora_expert_forward(experts[i], x));
    acc = acc.defined() ? add(acc, term) : term;
  }
  out.h_route = acc;
  out.h_final = add(out.h_shared, out.h_route);
  return out;
}

Tensor routing_stats(const RouterOutput& router_out) {
  const std::int64_t tokens = router_out.tokens;
  const int n = router_out.num_experts;
  if (tokens == 0) throw ContractError("routing_stats on an empty batch");
  Tensor flat = reshape(router_out.gates, {tokens, n});
  Tensor ones = Tensor::full({1, tokens}, 1.0 / static_cast<double>(tokens));
  return reshape(matmul(ones, flat), {n});
}

}  // namespace moelora
