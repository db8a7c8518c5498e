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

#ifndef MOELORA_GRADCHECK_HPP_
#define MOELORA_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moelora/tensor.hpp"

namespace moelora {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::int64_t coordinates = 0;
  // Location of the worst coordinate, for diagnostics.
  std::size_t worst_param = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Coordinates whose +eps or -eps probe changed the regime fingerprint.
  std::int64_t skipped_nonsmooth = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Lower bound on the error denominator; gradients smaller than this are
  // compared on an absolute scale.
  double denom_floor = 1e-8;
  // Optional fingerprint of the piecewise regime (ReLU signs, top-k sets)
  // reached by the most recent call of `f`. A coordinate whose probes land
  // in a different regime straddles a kink and is skipped.
  std::function<std::vector<std::int64_t>()> regime;
};

// Compares reverse-mode gradients of `f` against central differences
// (f(p + eps) - f(p - eps)) / (2 eps) for every coordinate of every tensor
// in `params` that requires a gradient. The error of one coordinate is
// |a - n| / max(|a|, |n|, denom_floor). `f` must rebuild its graph on each
// call and be deterministic (seed any dropout).
GradCheckResult finite_difference_report(const std::function<Tensor()>& f,
                                         std::vector<Tensor> params, const GradCheckOptions& options);

inline GradCheckResult finite_difference_report(const std::function<Tensor()>& f,
                                                std::vector<Tensor> params, double eps = 1e-5) {
  GradCheckOptions o;
  o.eps = eps;
  return finite_difference_report(f, std::move(params), o);
}

inline double finite_difference_check(const std::function<Tensor()>& f,
                                      std::vector<Tensor> params, double eps = 1e-5) {
  return finite_difference_report(f, std::move(params), eps).max_relative_error;
}

}  // namespace moelora

#endif  // MOELORA_GRADCHECK_HPP_
