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

// Differentiable operations. Every function records a backward rule when an
// operand requires a gradient. Binary elementwise ops broadcast with numpy
// rules.

#ifndef MOELORA_OPS_HPP_
#define MOELORA_OPS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "moelora/tensor.hpp"

namespace moelora {

Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor exp(const Tensor& x);
// Natural log with the input floored at 1e-300 so the result stays finite.
Tensor log(const Tensor& x);
// max(x, floor); the gradient is passed only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

// Inverted dropout. The mask for element i is a pure function of
// (key, i), so equal keys give equal masks.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t op_id = 0;
  std::uint64_t step = 0;
};
Tensor dropout(const Tensor& x, double rate, const DropoutKey& key);

// x / sqrt(mean(x^2, last) + eps)
Tensor rms_norm(const Tensor& x, double eps = 1e-6);
// x / sqrt(sum(x^2, last) + eps)
Tensor l2_normalize_last(const Tensor& x, double eps = 1e-24);

// weight: [V, d]; ids index rows; result shape = out_shape + [d].
Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids,
                 const Shape& out_shape);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int dim0, int dim1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces the last axis away.
Tensor sum_last(const Tensor& x);

// a[..., m, k] x b[..., k, n] with broadcast batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);
// a[..., m, k] x b[..., n, k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// x[..., in] x weight[out, in]^T
Tensor linear(const Tensor& x, const Tensor& weight);

Tensor softmax_last_dim(const Tensor& x);
Tensor log_softmax_last_dim(const Tensor& x);
Tensor logsumexp_last(const Tensor& x);

// Entries with mask != 0 are replaced by `value`; they receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);
// x[..., T, T]: entries above the diagonal become -inf.
Tensor causal_mask(const Tensor& x);

Tensor concat_last(const Tensor& a, const Tensor& b);
// x[..., V] -> [...], picking x[..., indices[j]] for each leading position j.
Tensor pick_last(const Tensor& x, std::span<const std::int64_t> indices);
// x[..., n] -> [..., 1]
Tensor slice_last(const Tensor& x, std::int64_t index);

}  // namespace moelora

#endif  // MOELORA_OPS_HPP_
