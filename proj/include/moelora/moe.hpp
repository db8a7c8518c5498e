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

// Sparse mixture of LoRA experts with a top-k linear router and the frozen
// MLP as an always-on shared expert.

#ifndef MOELORA_MOE_HPP_
#define MOELORA_MOE_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "moelora/tensor.hpp"
#include "moelora/transformer.hpp"

namespace moelora {

// Each expert is an independent low-rank adapter d -> r -> d.
using LoraExpert = LoraAdapter;

struct RouterNoise {
  // Gaussian noise on router logits; 0 disables it.
  double stddev = 0.0;
};

struct MoeConfig {
  int num_experts = 4;
  int top_k = 2;
  int rank = 4;
  double lora_alpha = 8.0;
  RouterNoise noise;
  double router_init_std = 0.02;

  void validate() const;
};

struct Router {
  Tensor weight;  // [n, d], trainable
  int num_experts = 0;
  int top_k = 0;
  RouterNoise noise;
};

struct RouterOutput {
  Tensor gates;   // [B, T, n], zero outside the selected experts
  Tensor logits;  // [B, T, n], after noise
  std::vector<std::int32_t> selected;  // [B*T, k], best first
  std::int64_t tokens = 0;
  int num_experts = 0;
  int top_k = 0;

  std::int32_t selected_at(std::int64_t token, int j) const { return selected[token * top_k + j]; }
  // Expert with the largest gate for `token`; ties go to the lowest index.
  int argmax_expert(std::int64_t token) const;
};

struct MoeOutput {
  Tensor h_final;
  Tensor h_route;
  Tensor h_shared;
  RouterOutput router;
};

// (alpha / r) * up(down(x)).
Tensor lora_expert_forward(const LoraExpert& expert, const Tensor& x);

// Indices of the k largest values, descending; equal values keep the lower
// index first.
std::vector<std::int32_t> top_k_indices(const double* values, int n, int k);

// logits = x W_r^T (+ noise when `noise_key` is set and noise is enabled);
// gates are a softmax over the k selected logits and zero elsewhere.
RouterOutput route(const Router& router, const Tensor& x,
                   std::optional<std::uint64_t> noise_key = std::nullopt);

// Same as `route` but starting from precomputed logits [B, T, n].
RouterOutput route_from_logits(const Tensor& logits, int top_k);

// h_route = sum_i gate_i * expert_i(x); h_final = shared(x) + h_route.
// With `routing_enabled == false` the routed path is skipped and
// h_final = shared(x).
MoeOutput moe_layer_forward(const Tensor& x, const std::vector<LoraExpert>& experts,
                            const Router& router, const BaseMlp& shared,
                            std::optional<std::uint64_t> noise_key = std::nullopt,
                            bool routing_enabled = true);

// Mean gate per expert over all B*T positions; differentiable, sums to 1.
Tensor routing_stats(const RouterOutput& router_out);

}  // namespace moelora

#endif  // MOELORA_MOE_HPP_
