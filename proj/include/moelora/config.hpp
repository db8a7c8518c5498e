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

#ifndef MOELORA_CONFIG_HPP_
#define MOELORA_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <string_view>

#include "moelora/contrastive.hpp"
#include "moelora/corpus.hpp"
#include "moelora/moe.hpp"
#include "moelora/optim.hpp"
#include "moelora/transformer.hpp"

namespace moelora {

// Everything needed to reproduce a run. `seed` is copied into the model,
// training and corpus seeds by `with_seed`/`parse_config`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  MoeConfig moe;
  ContrastiveConfig contrastive;
  TrainConfig train;
  SyntheticCorpusSpec corpus;

  // Checks each section plus the cross-section constraints.
  void validate() const;
  ExperimentConfig& with_seed(std::uint64_t s);
};

// JSON object with optional sections "model", "moe", "contrastive", "train",
// "corpus" and a top-level "seed". Missing keys keep their defaults; unknown
// keys raise ConfigError naming the key.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

// Canonical JSON form; parse_config(config_to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& config);

// 64-bit FNV-1a of the canonical JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace moelora

#endif  // MOELORA_CONFIG_HPP_
