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

#include "moelora/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "moelora/errors.hpp"
#include "moelora/random.hpp"

namespace moelora {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> data,
                                        bool requires_grad) {
  for (std::int64_t s : shape) {
    if (s < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw ContractError("use of an undefined tensor");
  return *n;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::randn(Shape shape, double stddev, std::uint64_t key, bool requires_grad) {
  const auto n = shape_numel(shape);
  std::vector<double> data(n);
  CounterRng rng(key);
  for (auto& v : data) v = stddev * rng.normal();
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::int64_t Tensor::size(std::int64_t axis) const {
  const auto& s = shape();
  const auto nd = static_cast<std::int64_t>(s.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ShapeError("axis out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(node_);
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty() || numel() == 0; }

std::vector<double> Tensor::grad() const {
  const auto& n = checked(node_);
  if (n.grad.empty()) return std::vector<double>(n.data.size(), 0.0);
  return n.grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(make_node(n.shape, n.data, false));
}

bool Tensor::is_leaf() const { return checked(node_).is_leaf(); }

const char* Tensor::op_name() const { return checked(node_).op; }

namespace {
thread_local bool grad_disabled = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }

Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      const char* op, std::function<void(detail::Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(data), false);
  node->op = op;
  const bool any = !grad_disabled && std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

namespace {

// Post-order DFS: parents precede children in the returned list.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(root.shape));
  }
  if (!root.requires_grad) return;
  auto order = topo_order(node_.get());
  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf() || !n->backward_fn) continue;
    n->backward_fn(*n);
  }
}

std::vector<const char*> computation_record(const Tensor& root) {
  std::vector<const char*> ops;
  if (!root.defined() || !root.requires_grad()) return ops;
  auto order = topo_order(root.node().get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) ops.push_back((*it)->op);
  }
  return ops;
}

}  // namespace moelora
