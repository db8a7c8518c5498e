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

// Expert contrastive objective: two projection views of the same token
// form the positive pair; negatives come from per-expert ring buffers of
// past view-B projections.

#ifndef MOELORA_CONTRASTIVE_HPP_
#define MOELORA_CONTRASTIVE_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "moelora/moe.hpp"
#include "moelora/ops.hpp"
#include "moelora/tensor.hpp"

namespace moelora {

enum class HeadId { kA, kB };

struct ContrastiveConfig {
  double temperature = 0.07;
  // Weight of the shared-expert output inside view B.
  double lambda = 1.0;
  // Negatives per step; a negative value means num_experts * queue_size / 2.
  int num_negatives = -1;
  bool normalize = true;
  int proj_dim = 64;
  // Hidden width of the projection heads; 0 means the model hidden dim.
  int head_hidden = 0;
  double dropout = 0.1;
  int queue_size = 8;

  void validate() const;
  int negatives_for(int num_experts) const {
    return num_negatives >= 0 ? num_negatives : num_experts * queue_size / 2;
  }
};

struct ProjectionHead {
  Tensor w1;  // [h, d]
  Tensor w2;  // [d_h, h]
  double dropout_rate = 0.0;
  HeadId id = HeadId::kA;

  static ProjectionHead init(HeadId id, int in_dim, int hidden, int out_dim, double dropout_rate,
                             std::uint64_t key);
};

// w2 relu(w1 drop(h_route))
Tensor project_view_a(const ProjectionHead& head, const Tensor& h_route, const DropoutKey& key);
// w2 relu(w1 drop(h_route + lambda h_shared))
Tensor project_view_b(const ProjectionHead& head, const Tensor& h_route, const Tensor& h_shared,
                      double lambda, const DropoutKey& key);

/// Fixed-capacity ring buffer of detached projection rows for one expert.
class ExpertMemoryQueue {
 public:
  ExpertMemoryQueue(int capacity, int dim);

  // Writes at write_ptr and advances it modulo capacity, overwriting the
  // oldest row once full.
  void push(std::span<const double> row);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int write_ptr() const { return write_ptr_; }
  int filled() const { return filled_; }
  std::span<const double> row(int i) const;
  const std::vector<double>& buffer() const { return buffer_; }

  // Restores state verbatim (checkpoint load).
  void restore(std::vector<double> buffer, int write_ptr, int filled);

 private:
  int capacity_;
  int dim_;
  int write_ptr_ = 0;
  int filled_ = 0;
  std::vector<double> buffer_;
};

using QueueBank = std::vector<ExpertMemoryQueue>;

QueueBank make_queue_bank(int num_experts, int capacity, int dim);

// Each row of z_b ([B, T, d_h] or [N, d_h], must be detached) goes to the
// queue of its token's largest-gate expert, in row order.
void enqueue(QueueBank& queues, const Tensor& z_b, const RouterOutput& router_out);

// Uniform sample without replacement of min(M, total filled) rows across all
// queues, returned as a constant [M', d_h] tensor in sampled order.
Tensor sample_negatives(const QueueBank& queues, int num_negatives, std::uint64_t key);

// Total floats held by the bank (capacity * dim per queue).
std::int64_t queue_storage_floats(const QueueBank& queues);

// Mean over rows of -log(e^{s(a,b)/tau} / (e^{s(a,b)/tau} + sum_j e^{s(a,q_j)/tau})).
// s is the dot product, of L2-normalized rows when `normalize` is set.
// Negatives are treated as constants. Returns exactly 0 with no negatives.
Tensor info_nce(const Tensor& z_a, const Tensor& z_b, const Tensor& negatives, double temperature,
                bool normalize = true);

}  // namespace moelora

#endif  // MOELORA_CONTRASTIVE_HPP_
