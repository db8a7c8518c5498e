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

#ifndef MOELORA_TENSOR_HPP_
#define MOELORA_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace moelora {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One value in the define-by-run graph. Parents and backward_fn are only
// populated when at least one parent requires a gradient.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// Copies share the underlying storage (handle semantics); use `clone()` or
/// `detach()` for an independent value. Forward ops never mutate their
/// operands; only `backward()` writes into gradient slots.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  // Gaussian entries from a counter-based stream keyed by `key`.
  static Tensor randn(Shape shape, double stddev, std::uint64_t key,
                      bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t dim() const { return static_cast<std::int64_t>(shape().size()); }
  // Size of axis `axis`; negative values count from the back.
  std::int64_t size(std::int64_t axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  // Direct write access for initialization and optimizer updates. Must not
  // be used on a tensor that participates in a live graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::int64_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Zeros if no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls; intermediate gradients are reset at the start of every sweep.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const { return detach(); }
  bool is_leaf() const;
  const char* op_name() const;

  // Engine internals.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds a result node. When any parent requires grad, the node records its
// parents and `backward_fn`; otherwise it is a constant.
Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents, const char* op,
                      std::function<void(detail::Node&)> backward_fn);

// While alive on the current thread, ops record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Ops executed in the order a backward sweep visits them (reverse topological
// order of the graph reachable from `root`).
std::vector<const char*> computation_record(const Tensor& root);

}  // namespace moelora

#endif  // MOELORA_TENSOR_HPP_
