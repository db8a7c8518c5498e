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

#include "moelora/trainer.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "moelora/diagnostics.hpp"
#include "moelora/errors.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"

namespace moelora {

namespace {

enum StreamTag : std::uint64_t { kShuffle = 101, kNoise, kNegatives, kGradcheck };

}  // namespace

MicroBatch make_micro_batch(std::span<const Sample* const> samples) {
  if (samples.empty()) throw ContractError("empty micro-batch");
  const auto len = samples.front()->tokens.size();
  if (len < 2) throw InputError("samples need at least two tokens");
  MicroBatch mb;
  mb.inputs.batch = static_cast<std::int64_t>(samples.size());
  mb.inputs.seq = static_cast<std::int64_t>(len - 1);
  for (const Sample* s : samples) {
    if (s->tokens.size() != len || s->loss_mask.size() != len) {
      throw InputError("micro-batch samples differ in length");
    }
    mb.inputs.ids.insert(mb.inputs.ids.end(), s->tokens.begin(), s->tokens.end() - 1);
    mb.targets.insert(mb.targets.end(), s->tokens.begin() + 1, s->tokens.end());
    mb.mask.insert(mb.mask.end(), s->loss_mask.begin() + 1, s->loss_mask.end());
    mb.task_ids.push_back(s->task_id);
  }
  return mb;
}

Objective compute_objective(const MoeLoraModel& model, const MicroBatch& batch,
                            std::span<const Tensor> negatives, const TrainConfig& cfg,
                            std::uint64_t micro_index) {
  Objective out;
  ForwardOptions opts;
  if (model.moe_config().noise.stddev > 0.0) opts.noise_key = hash_key({cfg.seed, kNoise, micro_index});
  out.forward = model.forward(batch.inputs, opts);
  Tensor lm = lm_loss(out.forward.logits, batch.targets, batch.mask);
  if (!cfg.auxiliary_losses) {
    out.loss = total_loss(lm, Tensor::scalar(0.0), Tensor::scalar(0.0), {0.0, 0.0});
    return out;
  }
  const auto& layers = model.layers();
  const auto& cc = model.contrastive_config();
  if (negatives.size() != layers.size()) {
    throw ContractError("compute_objective: need one negative set per layer");
  }
  Tensor bal_sum;
  Tensor co_sum;
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& trace = out.forward.layers[l];
    Tensor bal = balance_loss(routing_stats(trace.router));
    const DropoutKey ka{cfg.seed, 2 * l, micro_index};
    const DropoutKey kb{cfg.seed, 2 * l + 1, micro_index};
    Tensor za = project_view_a(layers[l].head_a, trace.h_route, ka);
    Tensor zb = project_view_b(layers[l].head_b, trace.h_route, trace.h_shared, cc.lambda, kb);
    Tensor co = info_nce(za, zb, negatives[l], cc.temperature, cc.normalize);
    out.z_b.push_back(zb.detach());
    bal_sum = l == 0 ? bal : add(bal_sum, bal);
    co_sum = l == 0 ? co : add(co_sum, co);
  }
  const double inv_layers = 1.0 / static_cast<double>(layers.size());
  out.loss = total_loss(lm, scale(bal_sum, inv_layers), scale(co_sum, inv_layers), cfg.loss_weights);
  return out;
}

ExperimentConfig gradcheck_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.model.vocab_size = 34;
  c.model.hidden_dim = 16;
  c.model.num_layers = 2;
  c.model.num_heads = 2;
  c.model.mlp_inner_dim = 32;
  c.model.max_seq_len = 12;
  c.moe.num_experts = 4;
  c.moe.top_k = 2;
  c.contrastive.proj_dim = 16;
  c.contrastive.queue_size = 4;
  c.corpus.vocab_size = 34;
  c.corpus.seq_len = 13;
  c.with_seed(seed);
  return c;
}

GradCheckResult objective_gradcheck(const ExperimentConfig& cfg, int batch, int seq, double eps,
                                    double denom_floor) {
  cfg.validate();
  if (batch < 1 || seq < 2 || seq > cfg.model.max_seq_len + 1) {
    throw ConfigError("objective_gradcheck: need batch >= 1 and 2 <= seq <= max_seq_len + 1");
  }
  MoeLoraModel model(cfg.model, cfg.moe, cfg.contrastive);
  model.randomize_adapter_ups(0.1, hash_key({cfg.seed, kGradcheck, 0}));

  CounterRng rng({cfg.seed, kGradcheck, 1});
  std::vector<Sample> samples(batch);
  for (auto& s : samples) {
    for (int t = 0; t < seq; ++t) s.tokens.push_back(static_cast<std::int32_t>(rng.below(cfg.model.vocab_size)));
    s.loss_mask.assign(seq, 1);
    s.loss_mask[0] = 0;
  }
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const MicroBatch mb = make_micro_batch(ptrs);

  const auto& cc = cfg.contrastive;
  const int num_neg = cc.negatives_for(cfg.moe.num_experts);
  std::vector<Tensor> negatives;
  for (int l = 0; l < cfg.model.num_layers; ++l) {
    QueueBank bank = make_queue_bank(cfg.moe.num_experts, cc.queue_size, cc.proj_dim);
    for (auto& q : bank) {
      for (int i = 0; i < cc.queue_size; ++i) {
        const Tensor row = Tensor::randn({cc.proj_dim}, 1.0, rng.next_u64());
        q.push(row.data());
      }
    }
    negatives.push_back(sample_negatives(bank, num_neg, hash_key({cfg.seed, kGradcheck, 2, static_cast<std::uint64_t>(l)})));
  }

  std::vector<Tensor> params;
  for (const auto& p : model.trainable_parameters()) params.push_back(p.tensor);
  std::vector<std::int64_t> fingerprint;
  auto f = [&] {
    Objective obj = compute_objective(model, mb, negatives, cfg.train, 0);
    NoGradGuard no_grad;
    fingerprint.clear();
    const auto& layers = model.layers();
    for (size_t l = 0; l < layers.size(); ++l) {
      const auto& trace = obj.forward.layers[l];
      fingerprint.insert(fingerprint.end(), trace.router.selected.begin(), trace.router.selected.end());
      const Tensor view_b_in = add(trace.h_route, scale(trace.h_shared, cc.lambda));
      const std::pair<const ProjectionHead*, const Tensor*> heads[] = {{&layers[l].head_a, &trace.h_route},
                                                                       {&layers[l].head_b, &view_b_in}};
      for (int h = 0; h < 2; ++h) {
        const auto& head = *heads[h].first;
        const Tensor pre = linear(dropout(*heads[h].second, head.dropout_rate, {cfg.train.seed, 2 * l + h, 0}), head.w1);
        for (double v : pre.data()) fingerprint.push_back(v > 0.0);
      }
    }
    return obj.loss.total;
  };
  GradCheckOptions options;
  options.eps = eps;
  options.denom_floor = denom_floor;
  options.regime = [&] { return fingerprint; };
  return finite_difference_report(f, params, options);
}

std::string metrics_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["lm"] = m.loss.lm;
  j["balance"] = m.loss.balance;
  j["contrastive"] = m.loss.contrastive;
  j["total"] = m.loss.total;
  j["lr"] = m.lr;
  j["grad_norm"] = m.grad_norm;
  j["clip_factor"] = m.clip_factor;
  j["conf_mean"] = m.conf_mean;
  j["conf_per_layer"] = m.conf_per_layer;
  j["p_bar"] = m.p_bar;
  if (m.eval_lm) j["eval_lm"] = *m.eval_lm;
  return j.dump();
}

Trainer::Trainer(MoeLoraModel& model, const SyntheticCorpus& corpus, TrainConfig cfg, TrainState state)
    : model_(model), corpus_(corpus), cfg_(std::move(cfg)), state_(std::move(state)) {
  cfg_.validate();
  if (corpus_.train.empty()) throw ContractError("training corpus is empty");
  if (state_.queues.size() != model_.layers().size()) {
    throw ContractError("train state holds " + std::to_string(state_.queues.size()) + " queue banks for " +
                        std::to_string(model_.layers().size()) + " layers");
  }
  for (const auto& p : model_.trainable_parameters()) params_.push_back(p.tensor);
}

const std::vector<std::int64_t>& Trainer::epoch_order(std::int64_t epoch) const {
  if (epoch != cached_epoch_) {
    const auto n = static_cast<std::int64_t>(corpus_.train.size());
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    CounterRng rng({cfg_.seed, kShuffle, static_cast<std::uint64_t>(epoch)});
    for (std::int64_t i = n - 1; i > 0; --i) std::swap(order_[i], order_[rng.below(i + 1)]);
    cached_epoch_ = epoch;
  }
  return order_;
}

std::vector<const Sample*> Trainer::batch_samples(std::int64_t step, int micro) const {
  const auto n = static_cast<std::int64_t>(corpus_.train.size());
  const std::int64_t micro_index = (step - 1) * cfg_.grad_accum + micro;
  std::vector<const Sample*> out;
  for (int j = 0; j < cfg_.batch_size; ++j) {
    const std::int64_t g = micro_index * cfg_.batch_size + j;
    out.push_back(&corpus_.train[epoch_order(g / n)[g % n]]);
  }
  return out;
}

StepMetrics Trainer::step() {
  const std::int64_t s = state_.step + 1;
  if (s > cfg_.total_steps) throw ContractError("training already reached total_steps");
  StepMetrics m;
  m.step = s;
  m.lr = lr_at(static_cast<int>(s), cfg_);
  for (auto& p : params_) p.zero_grad();

  const auto num_layers = model_.layers().size();
  const int num_experts = model_.moe_config().num_experts;
  std::vector<Tensor> negatives(num_layers);
  if (cfg_.auxiliary_losses) {
    const int count = model_.contrastive_config().negatives_for(num_experts);
    for (size_t l = 0; l < num_layers; ++l) {
      negatives[l] = sample_negatives(state_.queues[l], count, hash_key({cfg_.seed, kNegatives,
                                                                         static_cast<std::uint64_t>(s), l}));
    }
  }

  m.conf_per_layer.assign(num_layers, 0.0);
  m.p_bar.assign(num_layers, std::vector<double>(num_experts, 0.0));
  std::vector<std::int64_t> layer_tokens(num_layers, 0);
  std::vector<std::pair<std::vector<Tensor>, std::vector<RouterOutput>>> pending;
  const double inv_accum = 1.0 / static_cast<double>(cfg_.grad_accum);
  for (int micro = 0; micro < cfg_.grad_accum; ++micro) {
    const auto samples = batch_samples(s, micro);
    const MicroBatch mb = make_micro_batch(samples);
    const auto micro_index = static_cast<std::uint64_t>((s - 1) * cfg_.grad_accum + micro);
    Objective obj = compute_objective(model_, mb, negatives, cfg_, micro_index);
    scale(obj.loss.total, inv_accum).backward();
    m.loss.lm += obj.loss.breakdown.lm * inv_accum;
    m.loss.balance += obj.loss.breakdown.balance * inv_accum;
    m.loss.contrastive += obj.loss.breakdown.contrastive * inv_accum;
    m.loss.total += obj.loss.breakdown.total * inv_accum;
    std::vector<RouterOutput> routers;
    for (size_t l = 0; l < num_layers; ++l) {
      const auto& r = obj.forward.layers[l].router;
      m.conf_per_layer[l] += max_gate_sum(r);
      layer_tokens[l] += r.tokens;
      const Tensor pb = routing_stats(r);
      for (int e = 0; e < num_experts; ++e) m.p_bar[l][e] += pb.at(e) * inv_accum;
      routers.push_back(r);
    }
    pending.emplace_back(std::move(obj.z_b), std::move(routers));
  }

  m.grad_norm = global_grad_norm(params_);
  if (!std::isfinite(m.grad_norm)) throw TrainingError("non-finite gradient norm at step " + std::to_string(s));
  m.clip_factor = clip_global_norm(params_, cfg_.clip_norm);
  adamw_step(params_, state_.optimizer, m.lr, cfg_.weight_decay, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);

  if (cfg_.auxiliary_losses) {
    for (auto& [z_b, routers] : pending) {
      for (size_t l = 0; l < num_layers; ++l) enqueue(state_.queues[l], z_b[l], routers[l]);
    }
  }
  state_.step = s;

  double conf_total = 0.0;
  std::int64_t tokens = 0;
  for (size_t l = 0; l < num_layers; ++l) {
    conf_total += m.conf_per_layer[l];
    tokens += layer_tokens[l];
    m.conf_per_layer[l] /= static_cast<double>(layer_tokens[l]);
  }
  m.conf_mean = conf_total / static_cast<double>(tokens);
  if (s % cfg_.eval_every == 0 || s == cfg_.total_steps) m.eval_lm = heldout_lm_loss();
  return m;
}

double Trainer::heldout_lm_loss() const {
  NoGradGuard no_grad;
  const auto& held = corpus_.heldout;
  double weighted = 0.0;
  std::int64_t count = 0;
  for (size_t i = 0; i < held.size(); i += cfg_.batch_size) {
    std::vector<const Sample*> chunk;
    for (size_t j = i; j < std::min(held.size(), i + cfg_.batch_size); ++j) chunk.push_back(&held[j]);
    const MicroBatch mb = make_micro_batch(chunk);
    const auto n = std::count_if(mb.mask.begin(), mb.mask.end(), [](std::uint8_t v) { return v != 0; });
    if (n == 0) continue;
    const Tensor logits = model_.lm_forward(mb.inputs);
    weighted += lm_loss(logits, mb.targets, mb.mask).item() * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw ContractError("held-out split has no supervised tokens");
  return weighted / static_cast<double>(count);
}

TrainOutcome train(MoeLoraModel& model, const SyntheticCorpus& corpus, const ExperimentConfig& cfg,
                   TrainState state, std::optional<std::int64_t> stop_at,
                   const std::function<void(const StepMetrics&)>& on_step) {
  Trainer trainer(model, corpus, cfg.train, std::move(state));
  TrainOutcome out;
  const std::int64_t last = std::min<std::int64_t>(stop_at.value_or(cfg.train.total_steps), cfg.train.total_steps);
  try {
    while (trainer.state().step < last) {
      out.metrics.push_back(trainer.step());
      if (on_step) on_step(out.metrics.back());
    }
  } catch (const TrainingError& e) {
    out.abort_reason = e.what();
  }
  out.checkpoint = make_checkpoint(cfg, model, trainer.state());
  return out;
}

}  // namespace moelora
