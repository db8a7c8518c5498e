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

#include "moelora/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "moelora/errors.hpp"

namespace moelora {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (warmup_steps < 0 || total_steps <= 0 || warmup_steps >= total_steps) {
    throw ConfigError("train.warmup_steps must lie in [0, total_steps)");
  }
  if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train.min_lr_ratio must lie in (0, 1]");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be > 0");
  if (batch_size < 1 || grad_accum < 1) throw ConfigError("train.batch_size and grad_accum must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam_eps >= 0.0)) throw ConfigError("train.adam_eps must be >= 0");
  loss_weights.validate();
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(cfg.total_steps) + "]");
  }
  if (step < cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double floor = cfg.base_lr * cfg.min_lr_ratio;
  return floor + (cfg.base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(const std::vector<Tensor>& params, OptimizerState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state holds " + std::to_string(state.m.size()) +
                        " tensors, got " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (static_cast<std::int64_t>(state.m[i].size()) != params[i].numel()) {
      throw ShapeError("adamw_step: moment size mismatch for tensor " + std::to_string(i));
    }
    if (!params[i].requires_grad() || !params[i].has_grad()) continue;
    for (double g : params[i].node()->grad) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in tensor " + std::to_string(i));
    }
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (!p.requires_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * weight_decay * w[j];
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.node()->grad) g *= factor;
  }
  return factor;
}

}  // namespace moelora
