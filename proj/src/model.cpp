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

#include "moelora/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "moelora/errors.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"

namespace moelora {

namespace {

enum InitTag : std::uint64_t {
  kTokEmb = 1,
  kPosEmb,
  kOutProj,
  kAttnBase,
  kAttnLora,
  kMlpUp,
  kMlpDown,
  kExpert,
  kRouter,
  kHeadA,
  kHeadB,
};

std::uint64_t key(std::uint64_t seed, std::uint64_t tag, std::uint64_t layer = 0, std::uint64_t idx = 0) {
  return hash_key({seed, tag, layer, idx});
}

Tensor frozen(Shape shape, double stddev, std::uint64_t k) {
  return Tensor::randn(std::move(shape), stddev, k, false);
}

const char* proj_name(int i) {
  static const char* names[] = {"q", "k", "v", "o"};
  return names[i];
}

}  // namespace

MoeLoraModel::MoeLoraModel(ModelConfig model, MoeConfig moe, ContrastiveConfig contrastive)
    : config_(std::move(model)), moe_(std::move(moe)), contrastive_(std::move(contrastive)) {
  config_.validate();
  moe_.validate();
  contrastive_.validate();
  const int d = config_.hidden_dim;
  const double s = config_.init_std;
  const auto seed = config_.seed;
  token_embedding_ = frozen({config_.vocab_size, d}, s, key(seed, kTokEmb));
  position_embedding_ = frozen({config_.max_seq_len, d}, s, key(seed, kPosEmb));
  const double out_std =
      config_.output_init_std > 0.0 ? config_.output_init_std : 1.0 / std::sqrt(static_cast<double>(d));
  output_proj_ = frozen({config_.vocab_size, d}, out_std, key(seed, kOutProj));
  const int head_hidden = contrastive_.head_hidden > 0 ? contrastive_.head_hidden : d;

  layers_.resize(config_.num_layers);
  for (int l = 0; l < config_.num_layers; ++l) {
    auto& layer = layers_[l];
    layer.attn.enabled = config_.attn_lora_enabled(l);
    for (int p = 0; p < 4; ++p) {
      layer.attn.base[p] = frozen({d, d}, s, key(seed, kAttnBase, l, p));
      layer.attn.lora[p] =
          LoraAdapter::init(d, d, config_.attn_rank, config_.attn_alpha, key(seed, kAttnLora, l, p));
    }
    layer.mlp.up = frozen({config_.mlp_inner_dim, d}, s, key(seed, kMlpUp, l));
    layer.mlp.down = frozen({d, config_.mlp_inner_dim}, s, key(seed, kMlpDown, l));
    layer.mlp.activation = config_.activation;
    for (int e = 0; e < moe_.num_experts; ++e) {
      layer.experts.push_back(LoraAdapter::init(d, d, moe_.rank, moe_.lora_alpha, key(seed, kExpert, l, e)));
    }
    layer.router.num_experts = moe_.num_experts;
    layer.router.top_k = moe_.top_k;
    layer.router.noise = moe_.noise;
    layer.router.weight = Tensor::randn({moe_.num_experts, d}, moe_.router_init_std, key(seed, kRouter, l), true);
    layer.head_a = ProjectionHead::init(HeadId::kA, d, head_hidden, contrastive_.proj_dim, contrastive_.dropout,
                                        key(seed, kHeadA, l));
    layer.head_b = ProjectionHead::init(HeadId::kB, d, head_hidden, contrastive_.proj_dim, contrastive_.dropout,
                                        key(seed, kHeadB, l));
  }
}

Tensor MoeLoraModel::embed(const TokenBatch& tokens) const {
  if (static_cast<std::int64_t>(tokens.ids.size()) != tokens.batch * tokens.seq) {
    throw InputError("token batch holds " + std::to_string(tokens.ids.size()) + " ids for shape [" +
                     std::to_string(tokens.batch) + "," + std::to_string(tokens.seq) + "]");
  }
  if (tokens.seq > config_.max_seq_len) {
    throw ConfigError("sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  std::vector<std::int32_t> positions(tokens.seq);
  for (std::int64_t t = 0; t < tokens.seq; ++t) positions[t] = static_cast<std::int32_t>(t);
  Tensor tok = embedding(token_embedding_, tokens.ids, {tokens.batch, tokens.seq});
  Tensor pos = embedding(position_embedding_, positions, {tokens.seq});
  return add(tok, pos);
}

ForwardResult MoeLoraModel::forward(const TokenBatch& tokens, const ForwardOptions& options) const {
  ForwardResult result;
  Tensor x = embed(tokens);
  result.layers.reserve(layers_.size());
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    x = add(x, attention_forward(rms_norm(x), layer.attn, config_.num_heads, config_.max_seq_len));
    std::optional<std::uint64_t> noise;
    if (options.noise_key) noise = hash_key({*options.noise_key, l});
    MoeOutput moe = moe_layer_forward(rms_norm(x), layer.experts, layer.router, layer.mlp, noise,
                                      options.routing_enabled);
    x = add(x, moe.h_final);
    result.layers.push_back({moe.h_route, moe.h_shared, std::move(moe.router)});
  }
  result.logits = linear(rms_norm(x), output_proj_);
  return result;
}

Tensor MoeLoraModel::base_lm_forward(const TokenBatch& tokens) const {
  Tensor x = embed(tokens);
  for (const auto& layer : layers_) {
    AttentionLoraSet plain;
    plain.base = layer.attn.base;
    plain.enabled = false;
    x = add(x, attention_forward(rms_norm(x), plain, config_.num_heads, config_.max_seq_len));
    x = add(x, base_mlp_forward(layer.mlp, rms_norm(x)));
  }
  return linear(rms_norm(x), output_proj_);
}

std::vector<NamedTensor> MoeLoraModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    for (int i = 0; i < 4; ++i) {
      out.push_back({p + "attn." + proj_name(i) + ".lora_down", layer.attn.lora[i].down});
      out.push_back({p + "attn." + proj_name(i) + ".lora_up", layer.attn.lora[i].up});
    }
    for (size_t e = 0; e < layer.experts.size(); ++e) {
      out.push_back({p + "experts." + std::to_string(e) + ".down", layer.experts[e].down});
      out.push_back({p + "experts." + std::to_string(e) + ".up", layer.experts[e].up});
    }
    out.push_back({p + "router.weight", layer.router.weight});
    out.push_back({p + "head_a.w1", layer.head_a.w1});
    out.push_back({p + "head_a.w2", layer.head_a.w2});
    out.push_back({p + "head_b.w1", layer.head_b.w1});
    out.push_back({p + "head_b.w2", layer.head_b.w2});
  }
  return out;
}

std::vector<NamedTensor> MoeLoraModel::frozen_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"token_embedding", token_embedding_});
  out.push_back({"position_embedding", position_embedding_});
  out.push_back({"output_proj", output_proj_});
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    for (int i = 0; i < 4; ++i) out.push_back({p + "attn." + proj_name(i) + ".weight", layer.attn.base[i]});
    out.push_back({p + "mlp.up", layer.mlp.up});
    out.push_back({p + "mlp.down", layer.mlp.down});
  }
  return out;
}

std::vector<NamedTensor> MoeLoraModel::parameters() const {
  auto out = frozen_parameters();
  auto t = trainable_parameters();
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

void MoeLoraModel::zero_adapter_ups() {
  for (auto& layer : layers_) {
    for (auto& a : layer.attn.lora) std::fill(a.up.mutable_data().begin(), a.up.mutable_data().end(), 0.0);
    for (auto& e : layer.experts) std::fill(e.up.mutable_data().begin(), e.up.mutable_data().end(), 0.0);
  }
}

void MoeLoraModel::randomize_adapter_ups(double stddev, std::uint64_t k) {
  std::uint64_t i = 0;
  auto fill = [&](Tensor& t) {
    auto src = Tensor::randn(t.shape(), stddev, hash_key({k, i++}));
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  };
  for (auto& layer : layers_) {
    for (auto& a : layer.attn.lora) fill(a.up);
    for (auto& e : layer.experts) fill(e.up);
  }
}

}  // namespace moelora
