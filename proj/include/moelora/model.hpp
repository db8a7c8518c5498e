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

#ifndef MOELORA_MODEL_HPP_
#define MOELORA_MODEL_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moelora/contrastive.hpp"
#include "moelora/moe.hpp"
#include "moelora/tensor.hpp"
#include "moelora/transformer.hpp"

namespace moelora {

// Row-major token ids [batch, seq].
struct TokenBatch {
  std::int64_t batch = 0;
  std::int64_t seq = 0;
  std::vector<std::int32_t> ids;
};

struct ForwardOptions {
  // When false the routed experts are skipped: each MoE layer returns only
  // the shared expert.
  bool routing_enabled = true;
  // Keys router noise; only used when the router has noise configured.
  std::optional<std::uint64_t> noise_key;
};

struct LayerTrace {
  Tensor h_route;
  Tensor h_shared;
  RouterOutput router;
};

struct ForwardResult {
  Tensor logits;  // [B, T, vocab]
  std::vector<LayerTrace> layers;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct DecoderLayer {
  AttentionLoraSet attn;
  BaseMlp mlp;
  std::vector<LoraExpert> experts;
  Router router;
  ProjectionHead head_a;
  ProjectionHead head_b;
};

/// Decoder-only transformer with frozen base weights, LoRA on the attention
/// projections, and a sparse LoRA-expert MoE beside every frozen MLP.
///
/// Each block is pre-norm:
///   x = x + attn(rms_norm(x));  x = x + moe(rms_norm(x))
/// followed by a final rms_norm and the frozen output projection.
class MoeLoraModel {
 public:
  MoeLoraModel(ModelConfig model, MoeConfig moe, ContrastiveConfig contrastive);

  const ModelConfig& config() const { return config_; }
  const MoeConfig& moe_config() const { return moe_; }
  const ContrastiveConfig& contrastive_config() const { return contrastive_; }

  ForwardResult forward(const TokenBatch& tokens, const ForwardOptions& options = {}) const;
  Tensor lm_forward(const TokenBatch& tokens) const { return forward(tokens).logits; }
  // Reference path that uses only the frozen weights, no adapters or experts.
  Tensor base_lm_forward(const TokenBatch& tokens) const;

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> trainable_parameters() const;
  std::vector<NamedTensor> frozen_parameters() const;

  // Sets every LoRA up-projection (attention and experts) to zero.
  void zero_adapter_ups();
  // Fills every LoRA up-projection with N(0, stddev^2) entries.
  void randomize_adapter_ups(double stddev, std::uint64_t key);

  std::vector<DecoderLayer>& layers() { return layers_; }
  const std::vector<DecoderLayer>& layers() const { return layers_; }

 private:
  Tensor embed(const TokenBatch& tokens) const;

  ModelConfig config_;
  MoeConfig moe_;
  ContrastiveConfig contrastive_;
  Tensor token_embedding_;     // [V, d]
  Tensor position_embedding_;  // [max_seq_len, d]
  Tensor output_proj_;         // [V, d]
  std::vector<DecoderLayer> layers_;
};

}  // namespace moelora

#endif  // MOELORA_MODEL_HPP_
