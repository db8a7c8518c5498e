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

// Routing diagnostics, weighted benchmark aggregation and the toy
// multiple-choice evaluator.

#ifndef MOELORA_DIAGNOSTICS_HPP_
#define MOELORA_DIAGNOSTICS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moelora/corpus.hpp"
#include "moelora/model.hpp"
#include "moelora/moe.hpp"

namespace moelora {

struct GateRecord {
  int layer = 0;
  RouterOutput router;
};

struct ConfidenceReport {
  double global_conf = 0.0;
  std::vector<double> per_layer_conf;
  std::vector<std::int64_t> per_layer_tokens;
  std::int64_t token_count = 0;
};

// Sum over tokens of the largest gate.
double max_gate_sum(const RouterOutput& router);

// Conf = mean over tokens of max_e gate; per-layer values average only that
// layer's records, and the global value averages every token of every layer.
// Layers without records report 0. Throws ContractError on zero tokens.
ConfidenceReport routing_confidence(std::span<const GateRecord> records, int num_layers);

// Mean gate per expert for each layer, over all tokens of that layer.
std::vector<std::vector<double>> expert_utilization(std::span<const GateRecord> records, int num_layers);

struct BenchmarkScore {
  std::string name;
  std::int64_t count = 0;
  double accuracy = 0.0;  // percent
};

// sum N_i Acc_i / sum N_i. Throws ContractError when empty, InputError on a
// non-positive count or an accuracy outside [0, 100].
double weighted_average(std::span<const BenchmarkScore> scores);

// One "name count accuracy" triple per line; blank lines and '#' comments
// are ignored.
std::vector<BenchmarkScore> parse_scores(std::string_view text);

struct McEvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int evaluated = 0;
  int skipped = 0;
};

// Greedy choice among each probe's options at the position after its
// context. Malformed probes are skipped and counted.
McEvalResult toy_mc_eval(const MoeLoraModel& model, std::span<const Probe> probes);

// 2 I(a; b) / (H(a) + H(b)) from the empirical joint; 0 when both are
// constant.
double normalized_mutual_information(std::span<const int> a, std::span<const int> b);

struct RoutingProfile {
  ConfidenceReport confidence;
  std::vector<std::vector<double>> utilization;  // [layer][expert]
  // NMI between each token's task id and its last-layer argmax expert.
  double task_expert_nmi = 0.0;
  // Tokens won (by argmax gate) per [task][expert] in the last layer.
  std::vector<std::vector<std::int64_t>> task_expert_counts;
};

// Noise-free forward over `samples` (all but the final token of each) in
// batches of `batch_size`, without recording a graph.
RoutingProfile profile_routing(const MoeLoraModel& model, std::span<const Sample> samples,
                               int num_tasks, int batch_size = 16);

}  // namespace moelora

#endif  // MOELORA_DIAGNOSTICS_HPP_
