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

#include "moelora/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "moelora/errors.hpp"
#include "moelora/random.hpp"

namespace moelora {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (proj_dim < 1) throw ConfigError("proj_dim must be >= 1");
  if (head_hidden < 0) throw ConfigError("head_hidden must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("head dropout must be in [0, 1)");
  if (queue_size < 1) throw ConfigError("queue_size must be >= 1");
}

ProjectionHead ProjectionHead::init(HeadId id, int in_dim, int hidden, int out_dim, double dropout_rate,
                                    std::uint64_t key) {
  ProjectionHead h;
  h.id = id;
  h.dropout_rate = dropout_rate;
  h.w1 = Tensor::randn({hidden, in_dim}, 1.0 / std::sqrt(static_cast<double>(in_dim)),
                       hash_key({key, 1}), true);
  h.w2 = Tensor::randn({out_dim, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)),
                       hash_key({key, 2}), true);
  return h;
}

namespace {

Tensor apply_head(const ProjectionHead& head, const Tensor& x, const DropoutKey& key) {
  return linear(relu(linear(dropout(x, head.dropout_rate, key), head.w1)), head.w2);
}

}  // namespace

Tensor project_view_a(const ProjectionHead& head, const Tensor& h_route, const DropoutKey& key) {
  if (head.id != HeadId::kA) throw ContractError("project_view_a needs head A");
  return apply_head(head, h_route, key);
}

Tensor project_view_b(const ProjectionHead& head, const Tensor& h_route, const Tensor& h_shared,
                      double lambda, const DropoutKey& key) {
  if (head.id != HeadId::kB) throw ContractError("project_view_b needs head B");
  return apply_head(head, add(h_route, scale(h_shared, lambda)), key);
}

ExpertMemoryQueue::ExpertMemoryQueue(int capacity, int dim)
    : capacity_(capacity), dim_(dim), buffer_(static_cast<size_t>(capacity) * dim, 0.0) {
  if (capacity < 1 || dim < 1) throw ConfigError("queue capacity and dim must be >= 1");
}

void ExpertMemoryQueue::push(std::span<const double> row) {
  if (static_cast<int>(row.size()) != dim_) {
    throw ShapeError("queue row of length " + std::to_string(row.size()) + " for dim " + std::to_string(dim_));
  }
  std::copy(row.begin(), row.end(), buffer_.begin() + static_cast<std::ptrdiff_t>(write_ptr_) * dim_);
  write_ptr_ = (write_ptr_ + 1) % capacity_;
  filled_ = std::min(filled_ + 1, capacity_);
}

std::span<const double> ExpertMemoryQueue::row(int i) const {
  if (i < 0 || i >= filled_) throw ContractError("queue row " + std::to_string(i) + " is not filled");
  return std::span<const double>(buffer_).subspan(static_cast<size_t>(i) * dim_, dim_);
}

void ExpertMemoryQueue::restore(std::vector<double> buffer, int write_ptr, int filled) {
  if (buffer.size() != buffer_.size() || write_ptr < 0 || write_ptr >= capacity_ || filled < 0 ||
      filled > capacity_) {
    throw IntegrityError("queue state does not fit capacity " + std::to_string(capacity_));
  }
  buffer_ = std::move(buffer);
  write_ptr_ = write_ptr;
  filled_ = filled;
}

QueueBank make_queue_bank(int num_experts, int capacity, int dim) {
  QueueBank bank;
  bank.reserve(num_experts);
  for (int i = 0; i < num_experts; ++i) bank.emplace_back(capacity, dim);
  return bank;
}

void enqueue(QueueBank& queues, const Tensor& z_b, const RouterOutput& router_out) {
  if (z_b.requires_grad()) throw ContractError("enqueue needs a detached tensor");
  if (z_b.numel() == 0) return;
  const std::int64_t dim = z_b.size(-1);
  const std::int64_t rows = z_b.numel() / dim;
  if (rows != router_out.tokens) {
    throw ShapeError("enqueue: " + std::to_string(rows) + " rows for " + std::to_string(router_out.tokens) +
                     " routed tokens");
  }
  if (static_cast<int>(queues.size()) != router_out.num_experts) {
    throw ConfigError("enqueue: queue count differs from expert count");
  }
  const auto data = z_b.data();
  for (std::int64_t t = 0; t < rows; ++t) {
    queues[router_out.argmax_expert(t)].push(data.subspan(t * dim, dim));
  }
}

Tensor sample_negatives(const QueueBank& queues, int num_negatives, std::uint64_t key) {
  const int dim = queues.empty() ? 1 : queues.front().dim();
  std::vector<std::pair<int, int>> pool;
  for (int q = 0; q < static_cast<int>(queues.size()); ++q) {
    for (int r = 0; r < queues[q].filled(); ++r) pool.emplace_back(q, r);
  }
  const int take = std::min<int>(std::max(num_negatives, 0), static_cast<int>(pool.size()));
  CounterRng rng(key);
  for (int i = 0; i < take; ++i) {
    const auto j = i + static_cast<int>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(take) * dim);
  for (int i = 0; i < take; ++i) {
    const auto row = queues[pool[i].first].row(pool[i].second);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::from_data({take, dim}, std::move(out));
}

std::int64_t queue_storage_floats(const QueueBank& queues) {
  std::int64_t total = 0;
  for (const auto& q : queues) total += static_cast<std::int64_t>(q.buffer().size());
  return total;
}

Tensor info_nce(const Tensor& z_a, const Tensor& z_b, const Tensor& negatives, double temperature,
                bool normalize) {
  if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be > 0");
  if (z_a.shape() != z_b.shape()) {
    throw ShapeError("info_nce: views differ " + shape_str(z_a.shape()) + " vs " + shape_str(z_b.shape()));
  }
  const std::int64_t dim = z_a.size(-1);
  const std::int64_t rows = z_a.numel() / dim;
  if (negatives.numel() == 0) return Tensor::scalar(0.0);
  if (negatives.dim() != 2 || negatives.size(1) != dim) {
    throw ShapeError("info_nce: negatives " + shape_str(negatives.shape()) + " for dim " + std::to_string(dim));
  }
  Tensor a = reshape(z_a, {rows, dim});
  Tensor b = reshape(z_b, {rows, dim});
  Tensor q = negatives.detach();
  if (normalize) {
    a = l2_normalize_last(a);
    b = l2_normalize_last(b);
    q = l2_normalize_last(q);
  }
  const double inv_t = 1.0 / temperature;
  Tensor pos = reshape(sum_last(mul(a, b)), {rows, 1});
  Tensor logits = scale(concat_last(pos, matmul_nt(a, q)), inv_t);
  return mean(sub(logsumexp_last(logits), reshape(slice_last(logits, 0), {rows})));
}

}  // namespace moelora
