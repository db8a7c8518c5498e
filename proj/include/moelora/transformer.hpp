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

#ifndef MOELORA_TRANSFORMER_HPP_
#define MOELORA_TRANSFORMER_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "moelora/tensor.hpp"

namespace moelora {

enum class Activation { kSilu };

struct ModelConfig {
  int vocab_size = 256;
  int hidden_dim = 64;
  int num_layers = 4;
  int num_heads = 4;
  int mlp_inner_dim = 128;
  int max_seq_len = 64;
  Activation activation = Activation::kSilu;
  std::uint64_t seed = 0;
  // Std of every frozen base weight.
  double init_std = 0.02;
  // Std of the frozen output projection; 0 means 1/sqrt(hidden_dim), which
  // keeps the logits of a unit-RMS final state at unit scale.
  double output_init_std = 0.0;
  // Attention adapters on q/k/v/o.
  int attn_rank = 4;
  double attn_alpha = 8.0;
  // Per-layer switch for attention adapters; empty means every layer.
  std::vector<bool> attn_lora_layers;

  void validate() const;
  bool attn_lora_enabled(int layer) const {
    return attn_lora_layers.empty() || attn_lora_layers.at(layer);
  }
};

/// Low-rank increment (alpha / rank) * up(down(x)).
///
/// `down` is [rank, in] and `up` is [out, rank]; both are trainable. With
/// `up` all zero the increment is exactly zero.
struct LoraAdapter {
  Tensor down;
  Tensor up;
  double alpha = 1.0;
  int rank = 1;

  double scale() const { return alpha / static_cast<double>(rank); }
  static LoraAdapter init(int in_dim, int out_dim, int rank, double alpha, std::uint64_t key);
};

Tensor lora_delta(const LoraAdapter& adapter, const Tensor& x);

enum class Proj { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };

// Frozen attention projections plus their adapters.
struct AttentionLoraSet {
  std::array<Tensor, 4> base;  // [d, d] each, frozen
  std::array<LoraAdapter, 4> lora;
  bool enabled = true;

  // x W^T + (alpha/r) up(down(x)), the adapted projection applied to x.
  Tensor project(Proj which, const Tensor& x) const;
};

// Frozen MLP; also the shared expert of each MoE layer.
struct BaseMlp {
  Tensor up;    // [inner, d]
  Tensor down;  // [d, inner]
  Activation activation = Activation::kSilu;
};

// Multi-head causal self-attention over x[B, T, d].
Tensor attention_forward(const Tensor& x, const AttentionLoraSet& attn, int num_heads,
                         int max_seq_len);

Tensor base_mlp_forward(const BaseMlp& mlp, const Tensor& x);

}  // namespace moelora

#endif  // MOELORA_TRANSFORMER_HPP_
