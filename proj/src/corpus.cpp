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

#include "moelora/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moelora/errors.hpp"
#include "moelora/random.hpp"

namespace moelora {

namespace {

enum StreamTag : std::uint64_t { kTable = 1, kTrain, kHeldout, kProbe };

constexpr int kProbeOverhead = 2 + kNumOptions + 1;  // SEP, options, ANS, answer

std::int32_t draw(const double* row, int block, CounterRng& rng) {
  double u = rng.uniform();
  for (int b = 0; b < block; ++b) {
    u -= row[b];
    if (u < 0.0) return b;
  }
  return block - 1;
}

std::vector<std::int32_t> chain(const SyntheticCorpus& c, int task, int length, CounterRng& rng) {
  const int block = c.spec.block_size();
  const int base = c.spec.block_begin(task);
  const auto& table = c.transitions[task];
  std::vector<std::int32_t> out(length);
  std::int32_t state = static_cast<std::int32_t>(rng.below(block));
  for (int i = 0; i < length; ++i) {
    out[i] = base + state;
    state = draw(&table[static_cast<size_t>(state) * block], block, rng);
  }
  return out;
}

Probe make_probe(const SyntheticCorpus& c, int task, CounterRng& rng) {
  const auto& s = c.spec;
  Probe p;
  p.task_id = task;
  p.context = chain(c, task, s.seq_len - kProbeOverhead, rng);
  const std::int32_t answer = c.argmax_successor(p.context.back());
  const int block = s.block_size();
  const int base = s.block_begin(task);
  p.answer = static_cast<int>(rng.below(kNumOptions));
  std::vector<std::int32_t> pool;
  for (int b = 0; b < block; ++b) {
    if (base + b != answer) pool.push_back(base + b);
  }
  int next = 0;
  for (int o = 0; o < kNumOptions; ++o) {
    if (o == p.answer) {
      p.options[o] = answer;
      continue;
    }
    const auto j = next + static_cast<int>(rng.below(pool.size() - next));
    std::swap(pool[next], pool[j]);
    p.options[o] = pool[next++];
  }
  p.context.push_back(s.sep_token());
  p.context.insert(p.context.end(), p.options.begin(), p.options.end());
  p.context.push_back(s.answer_token());
  return p;
}

Sample make_sample(const SyntheticCorpus& c, CounterRng& rng) {
  const auto& s = c.spec;
  Sample out;
  out.task_id = static_cast<int>(rng.below(s.num_tasks));
  out.is_probe = rng.uniform() < s.probe_fraction;
  if (out.is_probe) {
    Probe p = make_probe(c, out.task_id, rng);
    out.tokens = std::move(p.context);
    out.tokens.push_back(p.options[p.answer]);
    out.loss_mask.assign(out.tokens.size(), 0);
    out.loss_mask.back() = 1;
  } else {
    out.tokens = chain(c, out.task_id, s.seq_len, rng);
    out.loss_mask.assign(out.tokens.size(), 1);
    out.loss_mask[0] = 0;
  }
  return out;
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
  if (num_tasks < 1) throw ConfigError("corpus.num_tasks must be >= 1");
  if (vocab_size < 2 + num_tasks * kNumOptions) {
    throw ConfigError("corpus.vocab_size " + std::to_string(vocab_size) + " too small for " +
                      std::to_string(num_tasks) + " task blocks of at least " +
                      std::to_string(kNumOptions) + " tokens");
  }
  if (num_sequences < 1 || num_heldout < 1) throw ConfigError("corpus sequence counts must be >= 1");
  if (seq_len < kProbeOverhead + 1) {
    throw ConfigError("corpus.seq_len must be >= " + std::to_string(kProbeOverhead + 1));
  }
  if (!(probe_fraction >= 0.0 && probe_fraction <= 1.0)) {
    throw ConfigError("corpus.probe_fraction must lie in [0, 1]");
  }
  if (branching < 1 || branching > block_size()) {
    throw ConfigError("corpus.branching must lie in [1, block size " + std::to_string(block_size()) + "]");
  }
  if (!(smoothing >= 0.0 && smoothing <= 1.0)) throw ConfigError("corpus.smoothing must lie in [0, 1]");
}

int SyntheticCorpus::task_of(std::int32_t token) const {
  const int block = spec.block_size();
  if (token < 0 || token >= block * spec.num_tasks) {
    throw InputError("token " + std::to_string(token) + " lies outside every task block");
  }
  return token / block;
}

std::int32_t SyntheticCorpus::argmax_successor(std::int32_t token) const {
  const int task = task_of(token);
  const int block = spec.block_size();
  const int a = token - spec.block_begin(task);
  const double* row = &transitions[task][static_cast<size_t>(a) * block];
  return spec.block_begin(task) + static_cast<std::int32_t>(std::max_element(row, row + block) - row);
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticCorpus c;
  c.spec = spec;
  c.seed = seed;
  const int block = spec.block_size();
  c.transitions.resize(spec.num_tasks);
  for (int t = 0; t < spec.num_tasks; ++t) {
    auto& table = c.transitions[t];
    table.assign(static_cast<size_t>(block) * block, spec.smoothing / block);
    CounterRng rng({seed, kTable, static_cast<std::uint64_t>(t)});
    std::vector<int> succ(block);
    for (int a = 0; a < block; ++a) {
      for (int b = 0; b < block; ++b) succ[b] = b;
      std::vector<double> w(spec.branching);
      double total = 0.0;
      for (int j = 0; j < spec.branching; ++j) {
        const auto k = j + static_cast<int>(rng.below(block - j));
        std::swap(succ[j], succ[k]);
        // Exponential weights give a Dirichlet(1) row over the successors.
        w[j] = -std::log(1.0 - rng.uniform());
        total += w[j];
      }
      for (int j = 0; j < spec.branching; ++j) {
        table[static_cast<size_t>(a) * block + succ[j]] += (1.0 - spec.smoothing) * w[j] / total;
      }
    }
  }
  CounterRng train_rng({seed, kTrain});
  for (int i = 0; i < spec.num_sequences; ++i) c.train.push_back(make_sample(c, train_rng));
  CounterRng heldout_rng({seed, kHeldout});
  for (int i = 0; i < spec.num_heldout; ++i) c.heldout.push_back(make_sample(c, heldout_rng));
  return c;
}

std::vector<std::int32_t> sample_chain(const SyntheticCorpus& corpus, int task, int length,
                                       std::uint64_t key) {
  if (task < 0 || task >= corpus.spec.num_tasks) {
    throw InputError("task " + std::to_string(task) + " out of range");
  }
  CounterRng rng(key);
  return chain(corpus, task, length, rng);
}

std::vector<Probe> generate_probes(const SyntheticCorpus& corpus, int count, std::uint64_t key) {
  CounterRng rng({key, kProbe});
  std::vector<Probe> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int task = static_cast<int>(rng.below(corpus.spec.num_tasks));
    out.push_back(make_probe(corpus, task, rng));
  }
  return out;
}

Probe probe_from_sample(const Sample& sample, const SyntheticCorpusSpec& spec) {
  if (!sample.is_probe || sample.tokens.size() < static_cast<size_t>(kProbeOverhead + 1)) {
    throw InputError("sample is not a probe");
  }
  Probe p;
  p.task_id = sample.task_id;
  p.context.assign(sample.tokens.begin(), sample.tokens.end() - 1);
  const auto opt = p.context.end() - 1 - kNumOptions;
  std::copy(opt, opt + kNumOptions, p.options.begin());
  const auto answer = sample.tokens.back();
  const auto it = std::find(p.options.begin(), p.options.end(), answer);
  if (it == p.options.end() || p.context.back() != spec.answer_token()) {
    throw InputError("probe answer not among its options");
  }
  p.answer = static_cast<int>(it - p.options.begin());
  return p;
}

}  // namespace moelora
