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

#include "moelora/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "moelora/errors.hpp"

namespace moelora {

double max_gate_sum(const RouterOutput& router) {
  const auto g = router.gates.data();
  const int n = router.num_experts;
  double total = 0.0;
  for (std::int64_t t = 0; t < router.tokens; ++t) {
    total += *std::max_element(g.begin() + t * n, g.begin() + (t + 1) * n);
  }
  return total;
}

ConfidenceReport routing_confidence(std::span<const GateRecord> records, int num_layers) {
  ConfidenceReport report;
  report.per_layer_conf.assign(num_layers, 0.0);
  report.per_layer_tokens.assign(num_layers, 0);
  std::vector<double> sums(num_layers, 0.0);
  double total = 0.0;
  for (const auto& r : records) {
    if (r.layer < 0 || r.layer >= num_layers) {
      throw ContractError("gate record for layer " + std::to_string(r.layer) + " outside [0, " +
                          std::to_string(num_layers) + ")");
    }
    const double s = max_gate_sum(r.router);
    sums[r.layer] += s;
    total += s;
    report.per_layer_tokens[r.layer] += r.router.tokens;
    report.token_count += r.router.tokens;
  }
  if (report.token_count == 0) throw ContractError("routing_confidence over zero tokens");
  for (int l = 0; l < num_layers; ++l) {
    if (report.per_layer_tokens[l] > 0) {
      report.per_layer_conf[l] = sums[l] / static_cast<double>(report.per_layer_tokens[l]);
    }
  }
  report.global_conf = total / static_cast<double>(report.token_count);
  return report;
}

std::vector<std::vector<double>> expert_utilization(std::span<const GateRecord> records, int num_layers) {
  std::vector<std::vector<double>> out(num_layers);
  std::vector<std::int64_t> tokens(num_layers, 0);
  for (const auto& r : records) {
    auto& row = out.at(r.layer);
    row.resize(r.router.num_experts, 0.0);
    const auto g = r.router.gates.data();
    for (std::int64_t t = 0; t < r.router.tokens; ++t) {
      for (int e = 0; e < r.router.num_experts; ++e) row[e] += g[t * r.router.num_experts + e];
    }
    tokens[r.layer] += r.router.tokens;
  }
  for (int l = 0; l < num_layers; ++l) {
    for (double& v : out[l]) v /= static_cast<double>(std::max<std::int64_t>(tokens[l], 1));
  }
  return out;
}

double weighted_average(std::span<const BenchmarkScore> scores) {
  if (scores.empty()) throw ContractError("weighted_average over an empty score list");
  double num = 0.0;
  double den = 0.0;
  for (const auto& s : scores) {
    if (s.count <= 0) throw InputError("benchmark '" + s.name + "' has non-positive count");
    if (!(s.accuracy >= 0.0 && s.accuracy <= 100.0)) {
      throw InputError("benchmark '" + s.name + "' accuracy outside [0, 100]");
    }
    num += static_cast<double>(s.count) * s.accuracy;
    den += static_cast<double>(s.count);
  }
  return num / den;
}

std::vector<BenchmarkScore> parse_scores(std::string_view text) {
  std::vector<BenchmarkScore> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    BenchmarkScore s;
    if (!(ls >> s.name)) continue;
    std::string extra;
    if (!(ls >> s.count >> s.accuracy) || (ls >> extra)) {
      throw InputError("scores line " + std::to_string(lineno) + ": expected 'name count accuracy'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

bool well_formed(const Probe& p, const ModelConfig& cfg) {
  if (p.context.empty() || static_cast<int>(p.context.size()) > cfg.max_seq_len) return false;
  if (p.answer < 0 || p.answer >= kNumOptions) return false;
  auto in_vocab = [&](std::int32_t t) { return t >= 0 && t < cfg.vocab_size; };
  if (!std::all_of(p.context.begin(), p.context.end(), in_vocab)) return false;
  if (!std::all_of(p.options.begin(), p.options.end(), in_vocab)) return false;
  std::set<std::int32_t> distinct(p.options.begin(), p.options.end());
  return distinct.size() == p.options.size();
}

}  // namespace

McEvalResult toy_mc_eval(const MoeLoraModel& model, std::span<const Probe> probes) {
  NoGradGuard no_grad;
  McEvalResult r;
  const auto vocab = model.config().vocab_size;
  for (const auto& p : probes) {
    if (!well_formed(p, model.config())) {
      ++r.skipped;
      continue;
    }
    const auto seq = static_cast<std::int64_t>(p.context.size());
    const Tensor logits = model.lm_forward({1, seq, p.context});
    const auto last = logits.data().subspan((seq - 1) * vocab, vocab);
    int best = 0;
    for (int o = 1; o < kNumOptions; ++o) {
      if (last[p.options[o]] > last[p.options[best]]) best = o;
    }
    ++r.evaluated;
    if (best == p.answer) ++r.correct;
  }
  r.accuracy = r.evaluated ? static_cast<double>(r.correct) / r.evaluated : 0.0;
  return r;
}

double normalized_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ShapeError("NMI over label lists of different lengths");
  if (a.empty()) throw ContractError("NMI over zero items");
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  const double n = static_cast<double>(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
    pab[{a[i], b[i]}] += 1.0 / n;
  }
  auto entropy = [](const std::map<int, double>& p) {
    double h = 0.0;
    for (const auto& [k, v] : p) h -= v * std::log(v);
    return h;
  };
  const double ha = entropy(pa);
  const double hb = entropy(pb);
  if (ha + hb <= 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [k, v] : pab) mi += v * std::log(v / (pa[k.first] * pb[k.second]));
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

RoutingProfile profile_routing(const MoeLoraModel& model, std::span<const Sample> samples, int num_tasks,
                               int batch_size) {
  NoGradGuard no_grad;
  const int layers = model.config().num_layers;
  const int experts = model.moe_config().num_experts;
  std::vector<GateRecord> records;
  std::vector<int> task_labels;
  std::vector<int> expert_labels;
  RoutingProfile out;
  out.task_expert_counts.assign(num_tasks, std::vector<std::int64_t>(experts, 0));
  size_t i = 0;
  while (i < samples.size()) {
    // Group consecutive samples of equal length into one batch.
    const auto len = samples[i].tokens.size() - 1;
    size_t j = i;
    TokenBatch batch;
    std::vector<int> tasks;
    while (j < samples.size() && j - i < static_cast<size_t>(batch_size) &&
           samples[j].tokens.size() - 1 == len) {
      batch.ids.insert(batch.ids.end(), samples[j].tokens.begin(), samples[j].tokens.end() - 1);
      tasks.push_back(samples[j].task_id);
      ++j;
    }
    batch.batch = static_cast<std::int64_t>(j - i);
    batch.seq = static_cast<std::int64_t>(len);
    const ForwardResult fwd = model.forward(batch);
    for (int l = 0; l < layers; ++l) records.push_back({l, fwd.layers[l].router});
    const auto& last = fwd.layers.back().router;
    for (std::int64_t t = 0; t < last.tokens; ++t) {
      const int task = tasks[t / batch.seq];
      const int e = last.argmax_expert(t);
      task_labels.push_back(task);
      expert_labels.push_back(e);
      if (task >= 0 && task < num_tasks) ++out.task_expert_counts[task][e];
    }
    i = j;
  }
  out.confidence = routing_confidence(records, layers);
  out.utilization = expert_utilization(records, layers);
  out.task_expert_nmi = normalized_mutual_information(task_labels, expert_labels);
  return out;
}

}  // namespace moelora
