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

#include "moelora/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "moelora/errors.hpp"

namespace moelora {

namespace {

using json = nlohmann::ordered_json;

// Reads typed fields from one section and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (!root.contains(name)) return;
    obj_ = &root.at(name);
    if (!obj_->is_object()) throw ConfigError(std::string("section '") + name + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    try {
      out = obj_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("bad value for '") + name_ + "." + key + "'");
    }
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &obj_->at(key);
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& item : obj_->items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("unknown key '" + item.key() + "' in section '" + name_ + "'");
      }
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  moe.validate();
  contrastive.validate();
  train.validate();
  corpus.validate();
  if (model.vocab_size != corpus.vocab_size) {
    throw ConfigError("model.vocab_size " + std::to_string(model.vocab_size) + " != corpus.vocab_size " +
                      std::to_string(corpus.vocab_size));
  }
  if (corpus.seq_len - 1 > model.max_seq_len) {
    throw ConfigError("corpus.seq_len - 1 exceeds model.max_seq_len " + std::to_string(model.max_seq_len));
  }
}

ExperimentConfig& ExperimentConfig::with_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
  return *this;
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kSections = {"seed", "model", "moe", "contrastive", "train", "corpus"};
  for (const auto& item : root.items()) {
    if (!kSections.count(item.key())) throw ConfigError("unknown top-level key '" + item.key() + "'");
  }
  ExperimentConfig c;
  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    c.seed = root["seed"].get<std::uint64_t>();
  }

  Section m(root, "model");
  m.get("vocab_size", c.model.vocab_size);
  m.get("hidden_dim", c.model.hidden_dim);
  m.get("num_layers", c.model.num_layers);
  m.get("num_heads", c.model.num_heads);
  m.get("mlp_inner_dim", c.model.mlp_inner_dim);
  m.get("max_seq_len", c.model.max_seq_len);
  std::string activation = "silu";
  m.get("activation", activation);
  if (activation != "silu") throw ConfigError("model.activation must be \"silu\"");
  m.get("init_std", c.model.init_std);
  m.get("output_init_std", c.model.output_init_std);
  m.get("attn_rank", c.model.attn_rank);
  m.get("attn_alpha", c.model.attn_alpha);
  m.get("attn_lora_layers", c.model.attn_lora_layers);
  m.finish();

  Section e(root, "moe");
  e.get("num_experts", c.moe.num_experts);
  e.get("top_k", c.moe.top_k);
  e.get("rank", c.moe.rank);
  e.get("lora_alpha", c.moe.lora_alpha);
  e.get("router_noise_std", c.moe.noise.stddev);
  e.get("router_init_std", c.moe.router_init_std);
  e.finish();

  Section k(root, "contrastive");
  k.get("temperature", c.contrastive.temperature);
  k.get("lambda", c.contrastive.lambda);
  k.get("num_negatives", c.contrastive.num_negatives);
  k.get("normalize", c.contrastive.normalize);
  k.get("proj_dim", c.contrastive.proj_dim);
  k.get("head_hidden", c.contrastive.head_hidden);
  k.get("dropout", c.contrastive.dropout);
  k.get("queue_size", c.contrastive.queue_size);
  k.finish();

  Section t(root, "train");
  t.get("base_lr", c.train.base_lr);
  t.get("warmup_steps", c.train.warmup_steps);
  t.get("total_steps", c.train.total_steps);
  t.get("min_lr_ratio", c.train.min_lr_ratio);
  t.get("clip_norm", c.train.clip_norm);
  t.get("batch_size", c.train.batch_size);
  t.get("grad_accum", c.train.grad_accum);
  t.get("weight_decay", c.train.weight_decay);
  t.get("eval_every", c.train.eval_every);
  t.get("beta1", c.train.beta1);
  t.get("beta2", c.train.beta2);
  t.get("adam_eps", c.train.adam_eps);
  t.get("auxiliary_losses", c.train.auxiliary_losses);
  t.get("balance_weight", c.train.loss_weights.balance);
  t.get("contrastive_weight", c.train.loss_weights.contrastive);
  t.finish();

  Section s(root, "corpus");
  s.get("num_tasks", c.corpus.num_tasks);
  s.get("vocab_size", c.corpus.vocab_size);
  s.get("num_sequences", c.corpus.num_sequences);
  s.get("num_heldout", c.corpus.num_heldout);
  s.get("seq_len", c.corpus.seq_len);
  s.get("probe_fraction", c.corpus.probe_fraction);
  s.get("branching", c.corpus.branching);
  s.get("smoothing", c.corpus.smoothing);
  s.finish();

  c.with_seed(c.seed);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json root;
  root["seed"] = c.seed;
  root["model"] = {{"vocab_size", c.model.vocab_size},
                   {"hidden_dim", c.model.hidden_dim},
                   {"num_layers", c.model.num_layers},
                   {"num_heads", c.model.num_heads},
                   {"mlp_inner_dim", c.model.mlp_inner_dim},
                   {"max_seq_len", c.model.max_seq_len},
                   {"activation", "silu"},
                   {"init_std", c.model.init_std},
                   {"output_init_std", c.model.output_init_std},
                   {"attn_rank", c.model.attn_rank},
                   {"attn_alpha", c.model.attn_alpha},
                   {"attn_lora_layers", c.model.attn_lora_layers}};
  root["moe"] = {{"num_experts", c.moe.num_experts},
                 {"top_k", c.moe.top_k},
                 {"rank", c.moe.rank},
                 {"lora_alpha", c.moe.lora_alpha},
                 {"router_noise_std", c.moe.noise.stddev},
                 {"router_init_std", c.moe.router_init_std}};
  root["contrastive"] = {{"temperature", c.contrastive.temperature},
                         {"lambda", c.contrastive.lambda},
                         {"num_negatives", c.contrastive.num_negatives},
                         {"normalize", c.contrastive.normalize},
                         {"proj_dim", c.contrastive.proj_dim},
                         {"head_hidden", c.contrastive.head_hidden},
                         {"dropout", c.contrastive.dropout},
                         {"queue_size", c.contrastive.queue_size}};
  root["train"] = {{"base_lr", c.train.base_lr},
                   {"warmup_steps", c.train.warmup_steps},
                   {"total_steps", c.train.total_steps},
                   {"min_lr_ratio", c.train.min_lr_ratio},
                   {"clip_norm", c.train.clip_norm},
                   {"batch_size", c.train.batch_size},
                   {"grad_accum", c.train.grad_accum},
                   {"weight_decay", c.train.weight_decay},
                   {"eval_every", c.train.eval_every},
                   {"beta1", c.train.beta1},
                   {"beta2", c.train.beta2},
                   {"adam_eps", c.train.adam_eps},
                   {"auxiliary_losses", c.train.auxiliary_losses},
                   {"balance_weight", c.train.loss_weights.balance},
                   {"contrastive_weight", c.train.loss_weights.contrastive}};
  root["corpus"] = {{"num_tasks", c.corpus.num_tasks},
                    {"vocab_size", c.corpus.vocab_size},
                    {"num_sequences", c.corpus.num_sequences},
                    {"num_heldout", c.corpus.num_heldout},
                    {"seq_len", c.corpus.seq_len},
                    {"probe_fraction", c.corpus.probe_fraction},
                    {"branching", c.corpus.branching},
                    {"smoothing", c.corpus.smoothing}};
  return root.dump(2) + "\n";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(config))));
  return buf;
}

}  // namespace moelora
