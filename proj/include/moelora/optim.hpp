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

#ifndef MOELORA_OPTIM_HPP_
#define MOELORA_OPTIM_HPP_

#include <cstdint>
#include <vector>

#include "moelora/losses.hpp"
#include "moelora/tensor.hpp"

namespace moelora {

struct TrainConfig {
  double base_lr = 1e-4;
  int warmup_steps = 200;
  int total_steps = 2000;
  double min_lr_ratio = 0.1;
  double clip_norm = 1.0;
  int batch_size = 8;  // sequences per micro-batch
  int grad_accum = 2;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  int eval_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // When false only the LM loss is formed: no heads, queues or balance term.
  bool auxiliary_losses = true;

  void validate() const;
};

// Linear warmup 0 -> base_lr over warmup_steps, then cosine decay to
// base_lr * min_lr_ratio at total_steps.
double lr_at(int step, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

// Decoupled decay w -= lr * wd * w, then a bias-corrected Adam step using
// each tensor's accumulated gradient. Tensors that do not require a
// gradient are left untouched. Throws TrainingError, before touching any
// parameter, if a gradient is not finite.
void adamw_step(const std::vector<Tensor>& params, OptimizerState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Scales every gradient by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns the factor applied (1 when unchanged).
double clip_global_norm(const std::vector<Tensor>& params, double max_norm = 1.0);

double global_grad_norm(const std::vector<Tensor>& params);

}  // namespace moelora

#endif  // MOELORA_OPTIM_HPP_
