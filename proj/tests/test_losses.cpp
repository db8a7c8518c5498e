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

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "moelora/errors.hpp"
#include "moelora/losses.hpp"
#include "moelora/ops.hpp"
#include "moelora/random.hpp"

using namespace moelora;

namespace {

// Scalar-loop masked NLL.
double lm_oracle(const Tensor& logits, const std::vector<std::int32_t>& targets, const std::vector<std::uint8_t>& mask) {
  const auto V = logits.size(-1);
  double total = 0.0;
  int count = 0;
  for (size_t p = 0; p < targets.size(); ++p) {
    if (!mask[p]) continue;
    double mx = -INFINITY;
    for (std::int64_t v = 0; v < V; ++v) mx = std::max(mx, logits.at(p * V + v));
    double z = 0.0;
    for (std::int64_t v = 0; v < V; ++v) z += std::exp(logits.at(p * V + v) - mx);
    total += -(logits.at(p * V + targets[p]) - mx - std::log(z));
    ++count;
  }
  return total / count;
}

std::vector<double> random_simplex(int n, CounterRng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) s += (v = -std::log(1.0 - rng.uniform()));
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("lm_loss: uniform logits give ln V") {
  auto logits = Tensor::zeros({2, 3, 256});
  std::vector<std::int32_t> targets{0, 5, 255, 17, 100, 3};
  std::vector<std::uint8_t> mask(6, 1);
  CHECK(std::abs(lm_loss(logits, targets, mask).item() - std::log(256.0)) <= 1e-12);
  CHECK(std::abs(lm_loss(logits, targets, mask).item() - 5.545177) <= 1e-6);
}

TEST_CASE("lm_loss: near one-hot target") {
  std::vector<double> v(2 * 10, 0.0);
  v[3] = 30.0;
  v[10 + 7] = 30.0;
  auto logits = Tensor::from_data({1, 2, 10}, v);
  std::vector<std::int32_t> targets{3, 7};
  std::vector<std::uint8_t> mask{1, 1};
  CHECK(lm_loss(logits, targets, mask).item() < 1e-9);
}

TEST_CASE("lm_loss: masking equals the loss over the kept positions") {
  auto logits = Tensor::randn({2, 4, 7}, 2.0, 5);
  std::vector<std::int32_t> targets{1, 2, 3, 4, 5, 6, 0, 1};
  std::vector<std::uint8_t> half{1, 0, 1, 0, 1, 0, 1, 0};
  // Second pass: only the kept rows, as their own batch.
  std::vector<double> kept;
  std::vector<std::int32_t> kept_targets;
  for (int p = 0; p < 8; p += 2) {
    kept.insert(kept.end(), logits.data().begin() + p * 7, logits.data().begin() + (p + 1) * 7);
    kept_targets.push_back(targets[p]);
  }
  const double masked = lm_loss(logits, targets, half).item();
  const double direct = lm_loss(Tensor::from_data({4, 7}, kept), kept_targets, std::vector<std::uint8_t>(4, 1)).item();
  CHECK(std::abs(masked - direct) <= 1e-12);
  CHECK(std::abs(masked - lm_oracle(logits, targets, half)) <= 1e-10);
}

TEST_CASE("lm_loss matches the scalar-loop reference") {
  CounterRng rng(3);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    auto logits = Tensor::randn({3, 5, 11}, 3.0, 40 + trial);
    std::vector<std::int32_t> targets(15);
    std::vector<std::uint8_t> mask(15);
    for (int i = 0; i < 15; ++i) {
      targets[i] = static_cast<std::int32_t>(rng.below(11));
      mask[i] = rng.uniform() < 0.6;
    }
    mask[0] = 1;
    CHECK(std::abs(lm_loss(logits, targets, mask).item() - lm_oracle(logits, targets, mask)) <= 1e-10);
  }
}

TEST_CASE("lm_loss errors") {
  auto logits = Tensor::zeros({1, 2, 4});
  std::vector<std::int32_t> targets{0, 1};
  CHECK_THROWS_AS(lm_loss(logits, targets, std::vector<std::uint8_t>{0, 0}), ContractError);
  CHECK_THROWS_AS(lm_loss(logits, std::vector<std::int32_t>{0}, std::vector<std::uint8_t>{1}), ShapeError);
}

TEST_CASE("balance loss examples") {
  CHECK(std::abs(balance_loss(Tensor::full({4}, 0.25)).item()) <= 1e-12);
  const std::vector<double> p{0.4, 0.3, 0.2, 0.1};
  double direct = 0.0;
  for (double v : p) direct += 0.25 * std::log(0.25 / v);
  const double got = balance_loss(Tensor::from_data({4}, p)).item();
  CHECK(std::abs(got - direct) <= 1e-15);
  CHECK(std::abs(got - 0.121777) <= 1e-6);

  const double degenerate = balance_loss(Tensor::from_data({2}, {1.0 - 1e-9, 1e-9})).item();
  CHECK(std::isfinite(degenerate));
  CHECK(degenerate > 5.0);
  const double collapsed = balance_loss(Tensor::from_data({4}, {1.0, 0.0, 0.0, 0.0})).item();
  CHECK(std::abs(collapsed - (0.75 * std::log(0.25 / 1e-9) + 0.25 * std::log(0.25))) <= 1e-9);
}

TEST_CASE("balance loss is non-negative and permutation invariant on random simplex points") {
  CounterRng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(7));
    auto p = random_simplex(n, rng);
    const double a = balance_loss(Tensor::from_data({n}, p)).item();
    CHECK(a >= 0.0);
    std::reverse(p.begin(), p.end());
    CHECK(std::abs(balance_loss(Tensor::from_data({n}, p)).item() - a) <= 1e-12);
  }
}

TEST_CASE("total loss composition") {
  auto lm = Tensor::scalar(2.0), bal = Tensor::scalar(0.5), co = Tensor::scalar(1.0);
  auto t = total_loss(lm, bal, co, {});
  CHECK(std::abs(t.total.item() - 2.015) <= 1e-15);
  CHECK(t.breakdown.total == t.total.item());
  CHECK(total_loss(lm, bal, co, {0.0, 0.0}).total.item() == 2.0);

  auto nan = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
  try {
    total_loss(lm, bal, nan, {});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("contrastive") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss(Tensor::scalar(INFINITY), bal, co, {}), TrainingError);
  LossWeights neg{-1.0, 0.0};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("total gradient is the weighted sum of the term gradients") {
  const std::vector<double> init{0.3, -0.2, 0.5, 0.1};
  auto make = [&] { return Tensor::from_data({4}, init, true); };
  auto terms = [](const Tensor& w) {
    Tensor lm = sum(mul(w, w));
    Tensor bal = balance_loss(softmax_last_dim(w));
    Tensor co = sum(exp(w));
    return std::array<Tensor, 3>{lm, bal, co};
  };
  const LossWeights lw{0.3, 0.7};
  auto w = make();
  auto t = terms(w);
  total_loss(t[0], t[1], t[2], lw).total.backward();
  std::vector<double> expected(4, 0.0);
  const double coeff[] = {1.0, lw.balance, lw.contrastive};
  for (int k = 0; k < 3; ++k) {
    auto wk = make();
    terms(wk)[k].backward();
    for (int i = 0; i < 4; ++i) expected[i] += coeff[k] * wk.grad()[i];
  }
  for (int i = 0; i < 4; ++i) CHECK(std::abs(w.grad()[i] - expected[i]) <= 1e-12);
}
