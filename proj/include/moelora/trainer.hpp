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

#ifndef MOELORA_TRAINER_HPP_
#define MOELORA_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelora/checkpoint.hpp"
#include "moelora/config.hpp"
#include "moelora/corpus.hpp"
#include "moelora/gradcheck.hpp"
#include "moelora/losses.hpp"
#include "moelora/model.hpp"

namespace moelora {

// Inputs are tokens[0..L-2] of each sample; targets are tokens[1..L-1].
struct MicroBatch {
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;
  std::vector<int> task_ids;
};

// All samples must have the same length.
MicroBatch make_micro_batch(std::span<const Sample* const> samples);

struct Objective {
  TotalLoss loss;
  ForwardResult forward;
  std::vector<Tensor> z_b;  // detached view-B projections per layer
};

// The joint objective for one micro-batch: LM loss plus the layer-averaged
// balance and contrastive terms. Dropout in the projection heads is keyed by
// (cfg.seed, 2 * layer + head, micro_index); router noise, when configured,
// by (cfg.seed, micro_index). `negatives` holds one tensor per layer.
Objective compute_objective(const MoeLoraModel& model, const MicroBatch& batch,
                            std::span<const Tensor> negatives, const TrainConfig& cfg,
                            std::uint64_t micro_index);

// Finite-difference check of the joint objective with respect to every
// trainable tensor of a model built from `cfg`. Adapter up-projections are
// randomized so no gradient path is trivially zero, the queues are filled
// with random rows, and the batch holds `batch` random sequences of `seq`
// tokens. Dropout and router noise are keyed, so the objective is a
// deterministic function of the parameters. Coordinates whose probes flip a
// top-k selection or a head ReLU sign are skipped as non-smooth.
// Small model for gradient checks: d 16, 2 layers, 4 experts with top-2,
// projection dim 16, queues of 4, vocabulary 34.
ExperimentConfig gradcheck_config(std::uint64_t seed = 0);

GradCheckResult objective_gradcheck(const ExperimentConfig& cfg, int batch = 2, int seq = 8,
                                    double eps = 2e-5, double denom_floor = 1e-6);

struct StepMetrics {
  std::int64_t step = 0;
  LossBreakdown loss;  // mean over micro-batches
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
  double clip_factor = 1.0;
  double conf_mean = 0.0;
  std::vector<double> conf_per_layer;
  std::vector<std::vector<double>> p_bar;  // [layer][expert]
  std::optional<double> eval_lm;
};

// One JSON object per line; byte-identical for identical values.
std::string metrics_json_line(const StepMetrics& m);

class Trainer {
 public:
  Trainer(MoeLoraModel& model, const SyntheticCorpus& corpus, TrainConfig cfg, TrainState state);

  // One optimizer step over grad_accum micro-batches. Throws TrainingError
  // on a non-finite loss or gradient before any parameter, queue or moment
  // is modified, so the model stays at the last good state.
  StepMetrics step();

  // Mean LM loss over the held-out split (no graph, no router noise).
  double heldout_lm_loss() const;

  // Samples of micro-batch `micro` of step `step` (1-based); a pure
  // function of (seed, step, micro).
  std::vector<const Sample*> batch_samples(std::int64_t step, int micro) const;

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  const std::vector<std::int64_t>& epoch_order(std::int64_t epoch) const;

  MoeLoraModel& model_;
  const SyntheticCorpus& corpus_;
  TrainConfig cfg_;
  TrainState state_;
  std::vector<Tensor> params_;
  mutable std::int64_t cached_epoch_ = -1;
  mutable std::vector<std::int64_t> order_;
};

struct TrainOutcome {
  Checkpoint checkpoint;  // last good state
  std::vector<StepMetrics> metrics;
  std::optional<std::string> abort_reason;
};

// Runs from `state.step` to cfg.train.total_steps (or `stop_at` when set).
// `on_step` sees every record as it is produced.
TrainOutcome train(MoeLoraModel& model, const SyntheticCorpus& corpus, const ExperimentConfig& cfg,
                   TrainState state, std::optional<std::int64_t> stop_at = std::nullopt,
                   const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace moelora

#endif  // MOELORA_TRAINER_HPP_
