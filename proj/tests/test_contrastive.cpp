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

#include <cmath>
#include <deque>
#include <set>
#include <vector>

#include "doctest.h"
#include "moelora/contrastive.hpp"
#include "moelora/errors.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"

using namespace moelora;

namespace {

ProjectionHead identity_head(HeadId id, int d) {
  std::vector<double> eye(d * d, 0.0);
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  ProjectionHead h;
  h.id = id;
  h.w1 = Tensor::from_data({d, d}, eye, true);
  h.w2 = Tensor::from_data({d, d}, eye, true);
  return h;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Scalar-loop InfoNCE: log-softmax of [pos, negs] / tau, target index 0.
double info_nce_oracle(const Tensor& za, const Tensor& zb, const Tensor& q, double tau, bool normalize) {
  const auto d = za.size(-1);
  const auto n = za.numel() / d;
  const auto m = q.numel() / d;
  auto row = [&](const Tensor& t, std::int64_t r) {
    std::vector<double> v(t.data().begin() + r * d, t.data().begin() + (r + 1) * d);
    if (normalize) {
      double s = 0.0;
      for (double x : v) s += x * x;
      for (double& x : v) x /= std::sqrt(s);
    }
    return v;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto a = row(za, i);
    std::vector<double> logits{dot(a, row(zb, i)) / tau};
    for (std::int64_t j = 0; j < m; ++j) logits.push_back(dot(a, row(q, j)) / tau);
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total += -(logits[0] - mx - std::log(z));
  }
  return total / static_cast<double>(n);
}

// Naive keep-last-K reference.
struct ReferenceQueue {
  int capacity;
  std::deque<std::vector<double>> rows;
  std::int64_t pushes = 0;
  void push(std::vector<double> r) {
    rows.push_back(std::move(r));
    if (static_cast<int>(rows.size()) > capacity) rows.pop_front();
    ++pushes;
  }
};

}  // namespace

TEST_CASE("contrastive config validation") {
  ContrastiveConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.negatives_for(4) == 16);
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("view A: identity head on nonnegative input, zero W1, head id contract") {
  auto head = identity_head(HeadId::kA, 4);
  auto h = Tensor::from_data({1, 2, 4}, {0.0, 1.0, 2.0, 3.0, 0.5, 0.25, 4.0, 0.0});
  CHECK(max_abs_diff(project_view_a(head, h, {}).data(), h.data()) == 0.0);
  head.w1 = Tensor::zeros({4, 4}, true);
  const auto zeroed = project_view_a(head, h, {});
  for (double v : zeroed.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(project_view_b(identity_head(HeadId::kA, 4), h, h, 1.0, {}), ContractError);
  CHECK_THROWS_AS(project_view_a(identity_head(HeadId::kB, 4), h, {}), ContractError);
}

TEST_CASE("seeded dropout in the heads") {
  auto head = ProjectionHead::init(HeadId::kA, 8, 8, 4, 0.5, 3);
  auto h = Tensor::randn({2, 5, 8}, 1.0, 4);
  auto a = project_view_a(head, h, {1, 0, 7});
  auto b = project_view_a(head, h, {1, 0, 7});
  auto c = project_view_a(head, h, {2, 0, 7});
  CHECK(max_abs_diff(a.data(), b.data()) == 0.0);
  CHECK(max_abs_diff(a.data(), c.data()) > 0.0);
}

TEST_CASE("view B: fusion off, zero shared, direct substitution") {
  auto head_a = ProjectionHead::init(HeadId::kA, 6, 5, 4, 0.3, 10);
  auto head_b = head_a;
  head_b.id = HeadId::kB;
  auto route_h = Tensor::randn({2, 3, 6}, 1.0, 11);
  auto shared = Tensor::randn({2, 3, 6}, 1.0, 12);
  const DropoutKey key{5, 1, 9};
  CHECK(max_abs_diff(project_view_b(head_b, route_h, shared, 0.0, key).data(),
                     project_view_a(head_a, route_h, key).data()) == 0.0);
  auto zero = Tensor::zeros({2, 3, 6});
  CHECK(max_abs_diff(project_view_b(head_b, route_h, zero, 0.3, key).data(),
                     project_view_b(head_b, route_h, zero, 2.0, key).data()) == 0.0);

  head_b.dropout_rate = 0.0;
  auto out = project_view_b(head_b, zero, shared, 1.0, {});
  // W2 relu(W1 h_shared), evaluated with scalar loops.
  for (std::int64_t t = 0; t < 6; ++t) {
    std::vector<double> hidden(5, 0.0);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 6; ++j) hidden[i] += head_b.w1.at(i * 6 + j) * shared.at(t * 6 + j);
      hidden[i] = std::max(hidden[i], 0.0);
    }
    for (int o = 0; o < 4; ++o) {
      double acc = 0.0;
      for (int i = 0; i < 5; ++i) acc += head_b.w2.at(o * 5 + i) * hidden[i];
      CHECK(std::abs(out.at(t * 4 + o) - acc) <= 1e-12);
    }
  }
}

TEST_CASE("queue: K=3 with four pushes wraps to {v4, v2, v3}") {
  ExpertMemoryQueue q(3, 2);
  for (double v : {1.0, 2.0, 3.0, 4.0}) {
    const std::vector<double> row{v, -v};
    q.push(row);
  }
  CHECK(q.write_ptr() == 1);
  CHECK(q.filled() == 3);
  CHECK(q.buffer() == std::vector<double>{4.0, -4.0, 2.0, -2.0, 3.0, -3.0});
  CHECK_THROWS_AS(q.push(std::vector<double>{1.0}), ShapeError);
  ExpertMemoryQueue fresh(3, 2);
  CHECK_THROWS_AS(fresh.row(0), ContractError);
}

TEST_CASE("enqueue routes rows by argmax gate and requires detached input") {
  QueueBank bank = make_queue_bank(3, 4, 2);
  auto router = route_from_logits(Tensor::from_data({1, 1, 3}, {std::log(0.1), std::log(0.7), std::log(0.2)}), 3);
  auto z = Tensor::from_data({1, 1, 2}, {5.0, 6.0});
  enqueue(bank, z, router);
  CHECK(bank[0].filled() == 0);
  CHECK(bank[1].filled() == 1);
  CHECK(bank[2].filled() == 0);
  CHECK(bank[1].row(0)[1] == 6.0);
  CHECK_THROWS_AS(enqueue(bank, Tensor::from_data({1, 1, 2}, {1.0, 2.0}, true), router), ContractError);

  auto before = bank;
  RouterOutput empty = route_from_logits(Tensor::zeros({0, 0, 3}), 1);
  enqueue(bank, Tensor::zeros({0, 0, 2}), empty);
  for (int i = 0; i < 3; ++i) {
    CHECK(bank[i].buffer() == before[i].buffer());
    CHECK(bank[i].write_ptr() == before[i].write_ptr());
  }
}

TEST_CASE("queue replay against the keep-last-K reference") {
  const int n = 3, K = 4, dim = 2;
  QueueBank bank = make_queue_bank(n, K, dim);
  std::vector<ReferenceQueue> ref(n, ReferenceQueue{K, {}, 0});
  CounterRng rng(77);
  for (int op = 0; op < 2000; ++op) {
    const int e = static_cast<int>(rng.below(n));
    std::vector<double> row{rng.uniform(), static_cast<double>(op)};
    bank[e].push(row);
    ref[e].push(row);
    CHECK(bank[e].filled() == static_cast<int>(ref[e].rows.size()));
    CHECK(bank[e].write_ptr() == static_cast<int>(ref[e].pushes % K));
  }
  for (int e = 0; e < n; ++e) {
    std::multiset<std::vector<double>> got, want(ref[e].rows.begin(), ref[e].rows.end());
    for (int r = 0; r < bank[e].filled(); ++r) got.emplace(bank[e].row(r).begin(), bank[e].row(r).end());
    CHECK(got == want);
  }
  CHECK(queue_storage_floats(bank) == n * K * dim);
}

TEST_CASE("negative sampling: cold start, saturation, determinism, no repeats") {
  QueueBank bank = make_queue_bank(4, 8, 3);
  CHECK(sample_negatives(bank, 16, 1).numel() == 0);
  for (int i = 0; i < 3; ++i) bank[i].push(std::vector<double>{double(i), 0.0, 1.0});
  auto s = sample_negatives(bank, 8, 2);
  CHECK(s.shape() == Shape{3, 3});
  std::set<double> firsts;
  for (int r = 0; r < 3; ++r) firsts.insert(s.at(r * 3));
  CHECK(firsts == std::set<double>{0.0, 1.0, 2.0});

  for (int i = 0; i < 20; ++i) bank[i % 4].push(std::vector<double>{100.0 + i, 0.0, 0.0});
  auto a = sample_negatives(bank, 10, 9);
  auto b = sample_negatives(bank, 10, 9);
  CHECK(a.shape() == Shape{10, 3});
  CHECK(max_abs_diff(a.data(), b.data()) == 0.0);
  std::set<double> seen;
  for (int r = 0; r < 10; ++r) seen.insert(a.at(r * 3));
  CHECK(seen.size() == 10);
  CHECK_FALSE(a.requires_grad());
}

TEST_CASE("info_nce closed forms") {
  auto za = Tensor::from_data({1, 2}, {1.0, 0.0});
  auto zb = Tensor::from_data({1, 2}, {0.0, 1.0});
  auto q = Tensor::from_data({1, 2}, {0.0, 1.0});
  CHECK(info_nce(za, zb, q, 1.0, false).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(info_nce(za, zb, q, 1.0, false).item() - 0.693147) <= 1e-6);

  const int d = 9;
  std::vector<double> e0(d, 0.0), negs;
  e0[0] = 1.0;
  for (int j = 1; j <= 8; ++j) {
    std::vector<double> ej(d, 0.0);
    ej[j] = 1.0;
    negs.insert(negs.end(), ej.begin(), ej.end());
  }
  auto u = Tensor::from_data({1, d}, e0);
  const double loss = info_nce(u, u, Tensor::from_data({8, d}, negs), 0.07, true).item();
  CHECK(std::abs(loss - std::log1p(8.0 * std::exp(-1.0 / 0.07))) <= 1e-15);
  CHECK(std::abs(loss - 5e-6) <= 1e-6);

  CHECK(info_nce(za, zb, Tensor::zeros({0, 2}), 0.07).item() == 0.0);
  CHECK_THROWS_AS(info_nce(za, zb, q, 0.0), ConfigError);
  CHECK_THROWS_AS(info_nce(za, Tensor::zeros({2, 2}), q, 0.1), ShapeError);
}

TEST_CASE("info_nce matches the scalar-loop reference") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    auto za = Tensor::randn({2, 5, 6}, 1.0, 100 + trial);
    auto zb = Tensor::randn({2, 5, 6}, 1.0, 200 + trial);
    auto q = Tensor::randn({7, 6}, 1.0, 300 + trial);
    for (bool norm : {true, false}) {
      const double tau = norm ? 0.07 : 2.0;
      CHECK(std::abs(info_nce(za, zb, q, tau, norm).item() - info_nce_oracle(za, zb, q, tau, norm)) <= 1e-10);
    }
    CHECK(info_nce(za, zb, q, 0.07).item() >= 0.0);
  }
}

TEST_CASE("info_nce: monotone in positive similarity, scale invariant, no gradient into the queue") {
  auto za = Tensor::from_data({1, 3}, {1.0, 0.0, 0.0});
  auto q = Tensor::from_data({2, 3}, {0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  double prev = INFINITY;
  for (double c : {-1.0, -0.5, 0.0, 0.5, 0.9, 1.0}) {
    auto zb = Tensor::from_data({1, 3}, {c, std::sqrt(1 - c * c), 0.0});
    const double l = info_nce(za, zb, q, 0.5).item();
    CHECK(l < prev);
    prev = l;
  }

  auto a = Tensor::randn({4, 5}, 1.0, 1);
  auto b = Tensor::randn({4, 5}, 1.0, 2);
  auto negs = Tensor::randn({6, 5}, 1.0, 3);
  for (double c : {0.01, 3.0, 1e4}) {
    CHECK(std::abs(info_nce(scale(a, c), b, negs, 0.07).item() - info_nce(a, b, negs, 0.07).item()) <= 1e-9);
  }

  auto live = Tensor::randn({6, 5}, 1.0, 3, true);
  auto a2 = Tensor::randn({4, 5}, 1.0, 1, true);
  info_nce(a2, b, live, 0.07).backward();
  for (double g : live.grad()) CHECK(g == 0.0);
  double ga = 0.0;
  for (double g : a2.grad()) ga += std::abs(g);
  CHECK(ga > 0.0);
}
