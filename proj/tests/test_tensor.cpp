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
#include <cstring>
#include <functional>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "moelora/errors.hpp"
#include "moelora/gradcheck.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"
#include "moelora/tensor.hpp"

using namespace moelora;

namespace {

Tensor param(Shape shape, std::uint64_t key, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), stddev, key, true);
}

// Reduces an op output to a scalar with fixed random weights so every
// output coordinate contributes a distinct amount.
Tensor weighted_sum(const Tensor& y, std::uint64_t key) {
  return sum(mul(y, Tensor::randn(y.shape(), 1.0, key)));
}

void check_op(const std::function<Tensor()>& f, std::vector<Tensor> params, double tol = 1e-6) {
  const auto r = finite_difference_report(f, params);
  CHECK_MESSAGE(r.max_relative_error < tol, "worst param " << r.worst_param << " idx " << r.worst_index
                                                           << " analytic " << r.worst_analytic
                                                           << " numeric " << r.worst_numeric);
}

}  // namespace

TEST_CASE("matmul examples") {
  auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, eye);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK(matmul(Tensor::from_data({1, 1}, {2}), Tensor::from_data({1, 1}, {3})).item() == 6.0);
}

TEST_CASE("matmul agrees with a triple-loop reference") {
  auto a = Tensor::randn({3, 4}, 1.0, 11);
  auto b = Tensor::randn({4, 2}, 1.0, 12);
  auto c = matmul(a, b);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double ref = 0.0;
      for (int k = 0; k < 4; ++k) ref += a.at(i * 4 + k) * b.at(k * 2 + j);
      CHECK(std::abs(c.at(i * 2 + j) - ref) <= 1e-12);
    }
  }
}

TEST_CASE("batched matmul broadcasts batch dims") {
  auto a = Tensor::randn({2, 3, 4, 5}, 1.0, 21);
  auto b = Tensor::randn({3, 5, 2}, 1.0, 22);
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 4, 2});
  for (int n = 0; n < 2; ++n) {
    for (int h = 0; h < 3; ++h) {
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 2; ++j) {
          double ref = 0.0;
          for (int k = 0; k < 5; ++k) ref += a.at(((n * 3 + h) * 4 + i) * 5 + k) * b.at((h * 5 + k) * 2 + j);
          CHECK(std::abs(c.at(((n * 3 + h) * 4 + i) * 2 + j) - ref) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("matmul shape errors name both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 1})), ShapeError);
  CHECK_THROWS_AS((void)add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("softmax examples") {
  auto u = softmax_last_dim(Tensor::zeros({4}));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  auto s = softmax_last_dim(Tensor::from_data({2}, {2.0, 1.0}));
  CHECK(s.at(0) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(s.at(1) == doctest::Approx(0.268941).epsilon(1e-6));
  CHECK(std::abs(s.at(0) - std::exp(2.0) / (std::exp(2.0) + std::exp(1.0))) < 1e-15);
  auto big = softmax_last_dim(Tensor::from_data({2}, {1000.0, 0.0}));
  CHECK(big.at(0) == 1.0);
  CHECK(big.at(1) >= 0.0);
  CHECK(big.at(1) < 1e-300);
  CHECK(std::isfinite(big.at(1)));
}

TEST_CASE("softmax rows sum to one and are permutation-equivariant") {
  CounterRng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(9));
    std::vector<double> x(n);
    for (auto& v : x) v = 20.0 * (rng.uniform() - 0.5);
    auto y = softmax_last_dim(Tensor::from_data({n}, x));
    double total = 0.0;
    for (double v : y.data()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> xp(n);
    for (int i = 0; i < n; ++i) xp[i] = x[perm[i]];
    auto yp = softmax_last_dim(Tensor::from_data({n}, xp));
    for (int i = 0; i < n; ++i) CHECK(std::abs(yp.at(i) - y.at(perm[i])) <= 1e-15);
  }
}

TEST_CASE("backward examples") {
  auto w = Tensor::from_data({1}, {3.0}, true);
  sum(mul(w, w)).backward();
  CHECK(w.grad()[0] == 6.0);

  auto x = Tensor::from_data({2}, {1.5, -2.0}, true);
  auto loss = add(sum(scale(x, 3.0)), sum(mul(x, x)));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0 + 2 * 1.5));
  CHECK(x.grad()[1] == doctest::Approx(3.0 - 4.0));

  CHECK_THROWS_AS(x.backward(), ContractError);
}

TEST_CASE("backward matmul agrees with finite differences") {
  auto a = param({3, 4}, 31);
  auto b = param({4, 2}, 32);
  const double err = finite_difference_check([&] { return sum(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("finite_difference_check on w^2 and frozen tensors") {
  auto w = Tensor::from_data({1}, {3.0}, true);
  CHECK(finite_difference_check([&] { return sum(mul(w, w)); }, {w}) < 1e-8);

  auto frozen = Tensor::from_data({2}, {0.3, -0.7}, false);
  const auto before = std::vector<double>(frozen.data().begin(), frozen.data().end());
  auto f = [&] { return add(sum(mul(w, w)), sum(mul(frozen, frozen))); };
  const auto with = finite_difference_report(f, {w, frozen});
  const auto without = finite_difference_report(f, {w});
  CHECK(with.max_relative_error == without.max_relative_error);
  CHECK(with.coordinates == without.coordinates);
  CHECK(std::vector<double>(frozen.data().begin(), frozen.data().end()) == before);
}

TEST_CASE("loss independent of a tensor leaves its grad zero") {
  auto used = param({3}, 41);
  auto unused = param({3}, 42);
  sum(mul(used, used)).backward();
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("recorded ops match finite differences") {
  SUBCASE("broadcast add/sub/mul/div") {
    auto a = param({2, 3, 4}, 51);
    auto b = param({3, 1}, 52);
    auto c = Tensor::from_data({4}, {1.5, 2.0, -1.7, 3.1}, true);
    check_op([&] { return weighted_sum(add(a, b), 1); }, {a, b});
    check_op([&] { return weighted_sum(sub(a, b), 2); }, {a, b});
    check_op([&] { return weighted_sum(mul(a, b), 3); }, {a, b});
    check_op([&] { return weighted_sum(div(a, c), 4); }, {a, c});
  }
  SUBCASE("unary") {
    auto x = param({10}, 61);
    auto pos = Tensor::from_data({4}, {0.5, 1.3, 2.2, 0.9}, true);
    check_op([&] { return weighted_sum(scale(x, -1.7), 5); }, {x});
    check_op([&] { return weighted_sum(add_scalar(x, 0.3), 5); }, {x});
    check_op([&] { return weighted_sum(silu(x), 6); }, {x});
    check_op([&] { return weighted_sum(exp(x), 7); }, {x});
    check_op([&] { return weighted_sum(log(pos), 8); }, {pos});
    auto away = Tensor::from_data({4}, {0.5, -1.3, 2.2, -0.9}, true);
    check_op([&] { return weighted_sum(relu(away), 9); }, {away});
    check_op([&] { return weighted_sum(clamp_min(away, 0.1), 9); }, {away});
  }
  SUBCASE("normalization") {
    auto x = param({3, 5}, 71);
    check_op([&] { return weighted_sum(rms_norm(x), 10); }, {x});
    check_op([&] { return weighted_sum(l2_normalize_last(x), 11); }, {x});
  }
  SUBCASE("dropout with a fixed key") {
    auto x = param({4, 6}, 81);
    DropoutKey key{7, 3, 11};
    check_op([&] { return weighted_sum(dropout(x, 0.3, key), 12); }, {x});
  }
  SUBCASE("embedding") {
    auto w = param({5, 3}, 91);
    std::vector<std::int32_t> ids{1, 4, 1, 0};
    check_op([&] { return weighted_sum(embedding(w, ids, {2, 2}), 13); }, {w});
  }
  SUBCASE("shape ops and reductions") {
    auto x = param({2, 3, 4}, 101);
    check_op([&] { return weighted_sum(reshape(x, {6, 4}), 14); }, {x});
    check_op([&] { return weighted_sum(permute(x, {2, 0, 1}), 15); }, {x});
    check_op([&] { return weighted_sum(transpose(x, 0, 2), 16); }, {x});
    check_op([&] { return mul(sum(x), sum(x)); }, {x});
    check_op([&] { return mul(mean(x), sum(x)); }, {x});
    check_op([&] { return weighted_sum(sum_last(x), 17); }, {x});
  }
  SUBCASE("matrix products") {
    auto a = param({2, 3, 4}, 111);
    auto b = param({4, 5}, 112);
    auto bt = param({5, 4}, 113);
    auto bb = param({2, 4, 5}, 114);
    check_op([&] { return weighted_sum(matmul(a, b), 18); }, {a, b});
    check_op([&] { return weighted_sum(matmul(a, bb), 19); }, {a, bb});
    check_op([&] { return weighted_sum(matmul_nt(a, bt), 20); }, {a, bt});
    check_op([&] { return weighted_sum(linear(a, bt), 21); }, {a, bt});
    auto q = param({2, 2, 3, 4}, 115);
    auto k = param({2, 2, 3, 4}, 116);
    check_op([&] { return weighted_sum(matmul_nt(q, k), 22); }, {q, k});
  }
  SUBCASE("softmax family and masking") {
    auto x = param({3, 4}, 121);
    check_op([&] { return weighted_sum(softmax_last_dim(x), 23); }, {x});
    check_op([&] { return weighted_sum(log_softmax_last_dim(x), 24); }, {x});
    check_op([&] { return weighted_sum(logsumexp_last(x), 25); }, {x});
    std::vector<std::uint8_t> mask{0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1};
    check_op([&] { return weighted_sum(softmax_last_dim(masked_fill(x, mask, -1e300)), 26); }, {x});
    auto s = param({2, 3, 3}, 122);
    check_op([&] { return weighted_sum(softmax_last_dim(causal_mask(s)), 27); }, {s});
  }
  SUBCASE("indexing") {
    auto a = param({2, 3}, 131);
    auto b = param({2, 2}, 132);
    check_op([&] { return weighted_sum(concat_last(a, b), 28); }, {a, b});
    std::vector<std::int64_t> idx{2, 0};
    check_op([&] { return weighted_sum(pick_last(a, idx), 29); }, {a});
    check_op([&] { return weighted_sum(slice_last(a, 1), 30); }, {a});
  }
}

TEST_CASE("grads accumulate across uses") {
  auto x = param({3}, 141);
  auto y = add(mul(x, Tensor::full({3}, 2.0)), mul(x, Tensor::full({3}, 5.0)));
  sum(y).backward();
  for (double g : x.grad()) CHECK(g == 7.0);
}

TEST_CASE("dropout masks are keyed") {
  auto x = Tensor::full({64}, 1.0);
  auto a = dropout(x, 0.5, {1, 2, 3});
  auto b = dropout(x, 0.5, {1, 2, 3});
  auto c = dropout(x, 0.5, {1, 2, 4});
  CHECK(std::memcmp(a.data().data(), b.data().data(), 64 * sizeof(double)) == 0);
  CHECK(std::memcmp(a.data().data(), c.data().data(), 64 * sizeof(double)) != 0);
  for (double v : a.data()) CHECK((v == 0.0 || v == 2.0));
  CHECK_THROWS_AS((void)dropout(x, 1.0, {}), ConfigError);
}

TEST_CASE("forward ops are bitwise reproducible") {
  auto run = [] {
    auto x = Tensor::randn({4, 8}, 1.0, 151);
    auto w = Tensor::randn({6, 8}, 1.0, 152);
    return softmax_last_dim(rms_norm(silu(linear(x, w))));
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0);
}

TEST_CASE("log stays finite at zero") {
  auto y = log(Tensor::from_data({2}, {0.0, -1.0}));
  for (double v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("computation record lists ops in backward order") {
  auto x = param({2}, 161);
  auto loss = sum(exp(x));
  auto record = computation_record(loss);
  REQUIRE(record.size() == 2);
  CHECK(std::string(record[0]) == "sum");
  CHECK(std::string(record[1]) == "exp");
}
