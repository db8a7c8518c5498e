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

// Versioned binary checkpoints.
//
// Layout (little-endian):
//   magic "MOELORA\0" (8 bytes), u32 format version, u32 record count,
//   then per record: u32 name length, name bytes, u8 kind, u32 ndim,
//   i64 dims[ndim], u64 payload bytes, payload, u32 CRC-32 of everything in
//   the record before the checksum.

#ifndef MOELORA_CHECKPOINT_HPP_
#define MOELORA_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "moelora/config.hpp"
#include "moelora/contrastive.hpp"
#include "moelora/model.hpp"
#include "moelora/optim.hpp"

namespace moelora {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Mutable training state besides the parameters. Random streams are keyed
// by (seed, step), so the step counter is the whole RNG state.
struct TrainState {
  std::int64_t step = 0;
  std::vector<QueueBank> queues;  // one bank per layer
  OptimizerState optimizer;
};

TrainState initial_train_state(const MoeLoraModel& model);

enum class RecordKind : std::uint8_t { kF64 = 1, kI64 = 2, kBytes = 3 };

struct Record {
  std::string name;
  RecordKind kind = RecordKind::kF64;
  Shape shape;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  std::string bytes;

  bool operator==(const Record&) const = default;
};

struct Checkpoint {
  std::vector<Record> records;

  const Record& get(const std::string& name) const;
  bool has(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

Checkpoint make_checkpoint(const ExperimentConfig& config, const MoeLoraModel& model, const TrainState& state);

ExperimentConfig checkpoint_config(const Checkpoint& ckpt);

struct RestoredRun {
  ExperimentConfig config;
  MoeLoraModel model;
  TrainState state;
};

// Rebuilds the model from the stored config and overwrites its trainable
// tensors, queues and optimizer moments with the stored values.
RestoredRun restore_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws IntegrityError naming the failing record on corruption or
// truncation, and on a format version other than kCheckpointVersion.
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Atomic: writes `path`.tmp, then renames it over `path`.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace moelora

#endif  // MOELORA_CHECKPOINT_HPP_
