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

#include "moelora/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "moelora/errors.hpp"

namespace moelora {

GradCheckResult finite_difference_report(const std::function<Tensor()>& f,
                                         std::vector<Tensor> params, const GradCheckOptions& options) {
  const double eps = options.eps;
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be positive");
  for (auto& p : params) p.zero_grad();
  f().backward();
  std::vector<std::int64_t> base_regime;
  if (options.regime) base_regime = options.regime();
  auto same_regime = [&] { return !options.regime || options.regime() == base_regime; };

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.requires_grad()) continue;
    auto data = p.mutable_data();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double plus = f().item();
      const bool plus_smooth = same_regime();
      data[i] = saved - eps;
      const double minus = f().item();
      const bool minus_smooth = same_regime();
      data[i] = saved;
      if (!plus_smooth || !minus_smooth) {
        ++result.skipped_nonsmooth;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denom_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (result.worst_index < 0 || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace moelora
