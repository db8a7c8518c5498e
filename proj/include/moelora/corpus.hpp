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

// Synthetic multi-task corpus: each task owns a disjoint vocabulary block and
// a first-order Markov chain over it. A fraction of sequences are formatted
// as 4-option multiple-choice probes whose loss mask covers only the answer.

#ifndef MOELORA_CORPUS_HPP_
#define MOELORA_CORPUS_HPP_

#include <array>
#include <cstdint>
#include <vector>

namespace moelora {

inline constexpr int kNumOptions = 4;

struct SyntheticCorpusSpec {
  int num_tasks = 4;
  int vocab_size = 256;
  int num_sequences = 2048;
  int num_heldout = 256;
  // Tokens per sequence; the model sees seq_len - 1 inputs after the shift.
  int seq_len = 65;
  double probe_fraction = 0.25;
  // Successors with most of the mass in every transition row.
  int branching = 4;
  // Probability spread uniformly over the whole task block.
  double smoothing = 0.02;

  void validate() const;
  // The last two ids are reserved for the probe separators.
  int sep_token() const { return vocab_size - 2; }
  int answer_token() const { return vocab_size - 1; }
  int block_size() const { return (vocab_size - 2) / num_tasks; }
  int block_begin(int task) const { return task * block_size(); }
};

struct Sample {
  std::vector<std::int32_t> tokens;
  // loss_mask[i] != 0 when tokens[i] is a prediction target.
  std::vector<std::uint8_t> loss_mask;
  int task_id = 0;
  bool is_probe = false;
};

// question..., SEP, option x4, ANS; the correct option follows ANS.
struct Probe {
  std::vector<std::int32_t> context;
  std::array<std::int32_t, kNumOptions> options{};
  int answer = 0;  // index into options
  int task_id = 0;
};

struct SyntheticCorpus {
  SyntheticCorpusSpec spec;
  std::uint64_t seed = 0;
  // transitions[task][a * block + b] = P(b | a), block-local indices.
  std::vector<std::vector<double>> transitions;
  std::vector<Sample> train;
  std::vector<Sample> heldout;

  // Most likely successor of `token` under its task's chain.
  std::int32_t argmax_successor(std::int32_t token) const;
  int task_of(std::int32_t token) const;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed);

// `length` tokens from task `task`'s chain, starting from a uniform state.
std::vector<std::int32_t> sample_chain(const SyntheticCorpus& corpus, int task, int length,
                                       std::uint64_t key);

// Fresh probes drawn independently of the training split.
std::vector<Probe> generate_probes(const SyntheticCorpus& corpus, int count, std::uint64_t key);

// Probe view of a probe-formatted sample.
Probe probe_from_sample(const Sample& sample, const SyntheticCorpusSpec& spec);

}  // namespace moelora

#endif  // MOELORA_CORPUS_HPP_
