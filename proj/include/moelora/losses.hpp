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

#ifndef MOELORA_LOSSES_HPP_
#define MOELORA_LOSSES_HPP_

#include <cstdint>
#include <span>

#include "moelora/tensor.hpp"

namespace moelora {

// Natural log throughout.
inline constexpr double kBalanceClampFloor = 1e-9;

struct LossWeights {
  double balance = 0.01;      // weight of the load-balancing KL term
  double contrastive = 0.01;  // weight of the expert contrastive term

  void validate() const;
};

struct LossBreakdown {
  double lm = 0.0;
  double balance = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// Mean over positions with mask != 0 of -log softmax(logits)[target].
// logits[b, t] is scored against targets[b*T + t]; callers shift so that the
// logit at position t predicts token t + 1.
Tensor lm_loss(const Tensor& logits, std::span<const std::int32_t> targets,
               std::span<const std::uint8_t> mask);

// KL(uniform || p_bar) = sum_i (1/n) log((1/n) / p_bar_i), with p_bar clamped
// below at kBalanceClampFloor.
Tensor balance_loss(const Tensor& p_bar);

struct TotalLoss {
  Tensor total;
  LossBreakdown breakdown;
};

// lm + w.balance * balance + w.contrastive * contrastive. Throws
// TrainingError naming the first non-finite term.
TotalLoss total_loss(const Tensor& lm, const Tensor& balance, const Tensor& contrastive,
                     const LossWeights& weights);

}  // namespace moelora

#endif  // MOELORA_LOSSES_HPP_
