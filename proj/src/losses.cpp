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

#include "moelora/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "moelora/errors.hpp"
#include "moelora/ops.hpp"

namespace moelora {

void LossWeights::validate() const {
  if (!(balance >= 0.0) || !(contrastive >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

Tensor lm_loss(const Tensor& logits, std::span<const std::int32_t> targets,
               std::span<const std::uint8_t> mask) {
  const std::int64_t positions = logits.numel() / logits.size(-1);
  if (static_cast<std::int64_t>(targets.size()) != positions ||
      static_cast<std::int64_t>(mask.size()) != positions) {
    throw ShapeError("lm_loss: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(mask.size()) + " mask entries for logits " + shape_str(logits.shape()));
  }
  std::vector<std::int64_t> idx(targets.begin(), targets.end());
  std::vector<double> weights(positions);
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < positions; ++i) {
    weights[i] = mask[i] ? 1.0 : 0.0;
    count += mask[i] ? 1 : 0;
  }
  if (count == 0) throw ContractError("lm_loss: every position is masked out");
  Shape lead(logits.shape().begin(), logits.shape().end() - 1);
  Tensor picked = pick_last(log_softmax_last_dim(logits), idx);
  Tensor masked = mul(picked, Tensor::from_data(lead, std::move(weights)));
  return scale(sum(masked), -1.0 / static_cast<double>(count));
}

Tensor balance_loss(const Tensor& p_bar) {
  const auto n = p_bar.numel();
  if (n == 0) throw ContractError("balance_loss on zero experts");
  const double log_uniform = std::log(1.0 / static_cast<double>(n));
  Tensor mean_log = scale(sum(log(clamp_min(p_bar, kBalanceClampFloor))), 1.0 / static_cast<double>(n));
  return add_scalar(scale(mean_log, -1.0), log_uniform);
}

TotalLoss total_loss(const Tensor& lm, const Tensor& balance, const Tensor& contrastive,
                     const LossWeights& weights) {
  const std::pair<const char*, const Tensor*> terms[] = {
      {"lm", &lm}, {"balance", &balance}, {"contrastive", &contrastive}};
  for (const auto& [name, t] : terms) {
    if (!std::isfinite(t->item())) {
      throw TrainingError(std::string("non-finite ") + name + " loss: " + std::to_string(t->item()));
    }
  }
  TotalLoss out;
  out.total = add(add(lm, scale(balance, weights.balance)), scale(contrastive, weights.contrastive));
  out.breakdown.lm = lm.item();
  out.breakdown.balance = balance.item();
  out.breakdown.contrastive = contrastive.item();
  out.breakdown.total = out.total.item();
  return out;
}

}  // namespace moelora
