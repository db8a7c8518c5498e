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

#include "moelora/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "moelora/errors.hpp"
#include "moelora/random.hpp"

namespace moelora {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kFloor = 1e-300;

// Offset into an operand of shape `in` for every element of `out`, where
// `in` broadcasts to `out` (right-aligned, size-1 axes repeat).
std::vector<std::int64_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const size_t nd = out.size();
  std::vector<std::int64_t> strides(nd, 0);
  std::int64_t s = 1;
  for (size_t i = 0; i < in.size(); ++i) {
    const size_t ii = in.size() - 1 - i;
    const size_t oi = nd - 1 - i;
    strides[oi] = (in[ii] == 1) ? 0 : s;
    s *= in[ii];
  }
  const auto n = shape_numel(out);
  std::vector<std::int64_t> offsets(n);
  std::vector<std::int64_t> idx(nd, 0);
  std::int64_t off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    offsets[i] = off;
    for (size_t d = nd; d-- > 0;) {
      ++idx[d];
      off += strides[d];
      if (idx[d] < out[d]) break;
      off -= strides[d] * out[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

NodePtr grad_target(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

// Shared driver for binary elementwise ops. `fwd(a, b)` gives the value,
// `da(a, b, y)` and `db(a, b, y)` the partial derivatives.
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F fwd, DA da, DB db) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const auto n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::int64_t> oa, ob;
  if (same) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
  } else {
    oa = broadcast_offsets(out_shape, a.shape());
    ob = broadcast_offsets(out_shape, b.shape());
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(ad[oa[i]], bd[ob[i]]);
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op_result(
      out_shape, std::move(out), {a, b}, name,
      [an, bn, same, oa = std::move(oa), ob = std::move(ob), da, db](Node& o) {
        auto ga = grad_target(an);
        auto gb = grad_target(bn);
        const auto n = static_cast<std::int64_t>(o.data.size());
        const double* x = an->data.data();
        const double* y = bn->data.data();
        for (std::int64_t i = 0; i < n; ++i) {
          const std::int64_t ia = same ? i : oa[i];
          const std::int64_t ib = same ? i : ob[i];
          const double g = o.grad[i];
          if (ga) ga->grad[ia] += g * da(x[ia], y[ib], o.data[i]);
          if (gb) gb->grad[ib] += g * db(x[ia], y[ib], o.data[i]);
        }
      });
}

// Shared driver for unary elementwise ops; `dfdx(x, y)` is the derivative.
template <typename F, typename D>
Tensor unary_op(const Tensor& x, const char* name, F f, D dfdx) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, name, [xn, dfdx](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (size_t i = 0; i < o.data.size(); ++i) {
      gx->grad[i] += o.grad[i] * dfdx(xn->data[i], o.data[i]);
    }
  });
}

std::int64_t last_dim(const Tensor& x, const char* name) {
  if (x.dim() < 1) throw ShapeError(std::string(name) + ": needs at least one axis");
  return x.shape().back();
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

// C = A * op(B) over broadcast batch dims. With trans_b, B is stored as
// [..., n, k].
Tensor matmul_impl(const Tensor& a, const Tensor& b, bool trans_b, const char* name) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw ShapeError(std::string(name) + ": operands need two or more axes, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::int64_t m = as[as.size() - 2];
  const std::int64_t k = as.back();
  const std::int64_t bk = trans_b ? bs.back() : bs[bs.size() - 2];
  const std::int64_t n = trans_b ? bs[bs.size() - 2] : bs.back();
  if (k != bk) {
    throw ShapeError(std::string(name) + ": inner dimensions differ for " + shape_str(as) +
                     " and " + shape_str(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(a_batch, b_batch);
  } catch (const ShapeError&) {
    throw ShapeError(std::string(name) + ": batch dimensions incompatible for " +
                     shape_str(as) + " and " + shape_str(bs));
  }
  const std::int64_t nbatch = shape_numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape), 0.0);

  // A 2-D right operand lets the whole left operand run as one GEMM.
  const bool flat = b_batch.empty();
  std::vector<std::int64_t> boa, bob;
  if (!flat) {
    boa = broadcast_offsets(batch, a_batch);
    bob = broadcast_offsets(batch, b_batch);
  }
  auto b_mat = [&](const double* p) -> RowMat {
    if (trans_b) return ConstMap(p, n, k).transpose();
    return ConstMap(p, k, n);
  };
  if (flat) {
    const std::int64_t rows = a.numel() / k;
    MutMap c(out.data(), rows, n);
    if (trans_b) {
      c.noalias() = ConstMap(a.data().data(), rows, k) * ConstMap(b.data().data(), n, k).transpose();
    } else {
      c.noalias() = ConstMap(a.data().data(), rows, k) * ConstMap(b.data().data(), k, n);
    }
  } else {
    for (std::int64_t i = 0; i < nbatch; ++i) {
      MutMap c(out.data() + i * m * n, m, n);
      c.noalias() = ConstMap(a.data().data() + boa[i] * m * k, m, k) *
                    b_mat(b.data().data() + bob[i] * k * n);
    }
  }

  NodePtr an = a.node(), bn = b.node();
  return make_op_result(
      out_shape, std::move(out), {a, b}, name,
      [an, bn, m, k, n, nbatch, flat, trans_b, boa = std::move(boa),
       bob = std::move(bob)](Node& o) {
        auto ga = grad_target(an);
        auto gb = grad_target(bn);
        const double* A = an->data.data();
        const double* B = bn->data.data();
        const double* G = o.grad.data();
        if (flat) {
          const std::int64_t rows = static_cast<std::int64_t>(an->data.size()) / k;
          ConstMap g(G, rows, n);
          if (ga) {
            MutMap da(ga->grad.data(), rows, k);
            if (trans_b) da.noalias() += g * ConstMap(B, n, k);
            else da.noalias() += g * ConstMap(B, k, n).transpose();
          }
          if (gb) {
            if (trans_b) MutMap(gb->grad.data(), n, k).noalias() += g.transpose() * ConstMap(A, rows, k);
            else MutMap(gb->grad.data(), k, n).noalias() += ConstMap(A, rows, k).transpose() * g;
          }
          return;
        }
        for (std::int64_t i = 0; i < nbatch; ++i) {
          ConstMap g(G + i * m * n, m, n);
          const double* Ai = A + boa[i] * m * k;
          const double* Bi = B + bob[i] * k * n;
          if (ga) {
            MutMap da(ga->grad.data() + boa[i] * m * k, m, k);
            if (trans_b) da.noalias() += g * ConstMap(Bi, n, k);
            else da.noalias() += g * ConstMap(Bi, k, n).transpose();
          }
          if (gb) {
            if (trans_b) MutMap(gb->grad.data() + bob[i] * k * n, n, k).noalias() += g.transpose() * ConstMap(Ai, m, k);
            else MutMap(gb->grad.data() + bob[i] * k * n, k, n).noalias() += ConstMap(Ai, m, k).transpose() * g;
          }
        }
      });
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (size_t i = 0; i < nd; ++i) {
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[nd - 1 - i] = (da == 1) ? db : da;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      x, "add_scalar", [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary_op(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(std::max(v, kFloor)); },
      [](double v, double) { return v > kFloor ? 1.0 / v : 0.0; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary_op(
      x, "clamp_min", [floor](double v) { return v > floor ? v : floor; },
      [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& x, double rate, const DropoutKey& key) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const std::uint64_t k = hash_key({key.seed, key.op_id, key.step});
  const double keep_scale = 1.0 / (1.0 - rate);
  const auto n = x.numel();
  std::vector<double> mask(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = to_unit(mix64(k ^ mix64(static_cast<std::uint64_t>(i))));
    mask[i] = u >= rate ? keep_scale : 0.0;
  }
  const auto xd = x.data();
  std::vector<double> out(n);
  for (std::int64_t i = 0; i < n; ++i) out[i] = xd[i] * mask[i];
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, "dropout",
                        [xn, mask = std::move(mask)](Node& o) {
                          auto gx = grad_target(xn);
                          if (!gx) return;
                          for (size_t i = 0; i < mask.size(); ++i) gx->grad[i] += o.grad[i] * mask[i];
                        });
}

Tensor rms_norm(const Tensor& x, double eps) {
  const std::int64_t d = last_dim(x, "rms_norm");
  const std::int64_t rows = d ? x.numel() / d : 0;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> inv(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += xd[r * d + j] * xd[r * d + j];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * inv[r];
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, "rms_norm",
                        [xn, d, rows, inv = std::move(inv)](Node& o) {
                          auto gx = grad_target(xn);
                          if (!gx) return;
                          for (std::int64_t r = 0; r < rows; ++r) {
                            double gy = 0.0;
                            for (std::int64_t j = 0; j < d; ++j) gy += o.grad[r * d + j] * o.data[r * d + j];
                            gy /= static_cast<double>(d);
                            for (std::int64_t j = 0; j < d; ++j) {
                              gx->grad[r * d + j] += inv[r] * (o.grad[r * d + j] - o.data[r * d + j] * gy);
                            }
                          }
                        });
}

Tensor l2_normalize_last(const Tensor& x, double eps) {
  const std::int64_t d = last_dim(x, "l2_normalize_last");
  const std::int64_t rows = d ? x.numel() / d : 0;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> inv(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += xd[r * d + j] * xd[r * d + j];
    inv[r] = 1.0 / std::sqrt(ss + eps);
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * inv[r];
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, "l2_normalize",
                        [xn, d, rows, inv = std::move(inv)](Node& o) {
                          auto gx = grad_target(xn);
                          if (!gx) return;
                          for (std::int64_t r = 0; r < rows; ++r) {
                            double gy = 0.0;
                            for (std::int64_t j = 0; j < d; ++j) gy += o.grad[r * d + j] * o.data[r * d + j];
                            for (std::int64_t j = 0; j < d; ++j) {
                              gx->grad[r * d + j] += inv[r] * (o.grad[r * d + j] - o.data[r * d + j] * gy);
                            }
                          }
                        });
}

Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids, const Shape& out_shape) {
  if (weight.dim() != 2) throw ShapeError("embedding: weight must be 2-D, got " + shape_str(weight.shape()));
  const std::int64_t vocab = weight.size(0);
  const std::int64_t d = weight.size(1);
  if (shape_numel(out_shape) != static_cast<std::int64_t>(ids.size())) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids for shape " + shape_str(out_shape));
  }
  std::vector<double> out(ids.size() * d);
  const auto w = weight.data();
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw InputError("token id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(w.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Shape shape = out_shape;
  shape.push_back(d);
  NodePtr wn = weight.node();
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_op_result(std::move(shape), std::move(out), {weight}, "embedding",
                        [wn, d, saved = std::move(saved)](Node& o) {
                          auto gw = grad_target(wn);
                          if (!gw) return;
                          for (size_t i = 0; i < saved.size(); ++i) {
                            for (std::int64_t j = 0; j < d; ++j) gw->grad[saved[i] * d + j] += o.grad[i * d + j];
                          }
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  NodePtr xn = x.node();
  return make_op_result(std::move(shape), std::move(out), {x}, "reshape", [xn](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (size_t i = 0; i < o.grad.size(); ++i) gx->grad[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const auto& s = x.shape();
  const size_t nd = s.size();
  if (perm.size() != nd) throw ShapeError("permute: rank mismatch for " + shape_str(s));
  std::vector<int> check(perm);
  std::sort(check.begin(), check.end());
  for (size_t i = 0; i < nd; ++i) {
    if (check[i] != static_cast<int>(i)) throw ShapeError("permute: invalid permutation");
  }
  std::vector<std::int64_t> in_strides(nd, 1);
  for (size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(nd);
  std::vector<std::int64_t> strides(nd);
  for (size_t i = 0; i < nd; ++i) {
    out_shape[i] = s[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  const auto n = x.numel();
  std::vector<std::int64_t> src(n);
  std::vector<std::int64_t> idx(nd, 0);
  std::int64_t off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    src[i] = off;
    for (size_t d = nd; d-- > 0;) {
      ++idx[d];
      off += strides[d];
      if (idx[d] < out_shape[d]) break;
      off -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<double> out(n);
  for (std::int64_t i = 0; i < n; ++i) out[i] = xd[src[i]];
  NodePtr xn = x.node();
  return make_op_result(std::move(out_shape), std::move(out), {x}, "permute",
                        [xn, src = std::move(src)](Node& o) {
                          auto gx = grad_target(xn);
                          if (!gx) return;
                          for (size_t i = 0; i < src.size(); ++i) gx->grad[src[i]] += o.grad[i];
                        });
}

Tensor transpose(const Tensor& x, int dim0, int dim1) {
  const int nd = static_cast<int>(x.dim());
  if (dim0 < 0) dim0 += nd;
  if (dim1 < 0) dim1 += nd;
  std::vector<int> perm(nd);
  std::iota(perm.begin(), perm.end(), 0);
  if (dim0 < 0 || dim1 < 0 || dim0 >= nd || dim1 >= nd) {
    throw ShapeError("transpose: axis out of range for " + shape_str(x.shape()));
  }
  std::swap(perm[dim0], perm[dim1]);
  return permute(x, perm);
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  NodePtr xn = x.node();
  return make_op_result({}, {s}, {x}, "sum", [xn](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (auto& g : gx->grad) g += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = x.numel();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor sum_last(const Tensor& x) {
  const std::int64_t d = last_dim(x, "sum_last");
  const std::int64_t rows = d ? x.numel() / d : shape_numel(drop_last(x.shape()));
  const auto xd = x.data();
  std::vector<double> out(rows, 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < d; ++j) out[r] += xd[r * d + j];
  }
  NodePtr xn = x.node();
  return make_op_result(drop_last(x.shape()), std::move(out), {x}, "sum_last", [xn, d](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (size_t r = 0; r < o.grad.size(); ++r) {
      for (std::int64_t j = 0; j < d; ++j) gx->grad[r * d + j] += o.grad[r];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false, "matmul"); }

Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true, "matmul_nt"); }

Tensor linear(const Tensor& x, const Tensor& weight) {
  if (weight.dim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(weight.shape()));
  if (x.dim() == 1) {
    return reshape(matmul_impl(reshape(x, {1, x.size(0)}), weight, true, "linear"), {weight.size(0)});
  }
  return matmul_impl(x, weight, true, "linear");
}

Tensor softmax_last_dim(const Tensor& x) {
  const std::int64_t d = last_dim(x, "softmax_last_dim");
  const std::int64_t rows = d ? x.numel() / d : 0;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      y[j] = std::exp(in[j] - mx);
      z += y[j];
    }
    for (std::int64_t j = 0; j < d; ++j) y[j] /= z;
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, "softmax", [xn, d, rows](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * d;
      const double* g = o.grad.data() + r * d;
      double dot = 0.0;
      for (std::int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::int64_t j = 0; j < d; ++j) gx->grad[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

namespace {

std::vector<double> row_logsumexp(std::span<const double> xd, std::int64_t d) {
  const std::int64_t rows = d ? static_cast<std::int64_t>(xd.size()) / d : 0;
  std::vector<double> lse(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::int64_t j = 0; j < d; ++j) z += std::exp(in[j] - mx);
    lse[r] = mx + std::log(z);
  }
  return lse;
}

}  // namespace

Tensor log_softmax_last_dim(const Tensor& x) {
  const std::int64_t d = last_dim(x, "log_softmax_last_dim");
  const auto xd = x.data();
  const auto lse = row_logsumexp(xd, d);
  std::vector<double> out(xd.size());
  for (size_t r = 0; r < lse.size(); ++r) {
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] - lse[r];
  }
  NodePtr xn = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, "log_softmax", [xn, d](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    const auto rows = static_cast<std::int64_t>(o.data.size()) / d;
    for (std::int64_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::int64_t j = 0; j < d; ++j) gs += o.grad[r * d + j];
      for (std::int64_t j = 0; j < d; ++j) {
        gx->grad[r * d + j] += o.grad[r * d + j] - std::exp(o.data[r * d + j]) * gs;
      }
    }
  });
}

Tensor logsumexp_last(const Tensor& x) {
  const std::int64_t d = last_dim(x, "logsumexp_last");
  if (d == 0) throw ShapeError("logsumexp_last: empty last axis");
  auto lse = row_logsumexp(x.data(), d);
  NodePtr xn = x.node();
  return make_op_result(drop_last(x.shape()), std::move(lse), {x}, "logsumexp", [xn, d](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (size_t r = 0; r < o.data.size(); ++r) {
      for (std::int64_t j = 0; j < d; ++j) {
        gx->grad[r * d + j] += o.grad[r] * std::exp(xn->data[r * d + j] - o.data[r]);
      }
    }
  });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (static_cast<std::int64_t>(mask.size()) != x.numel()) {
    throw ShapeError("masked_fill: mask size " + std::to_string(mask.size()) + " for shape " +
                     shape_str(x.shape()));
  }
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = mask[i] ? value : xd[i];
  NodePtr xn = x.node();
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return make_op_result(x.shape(), std::move(out), {x}, "masked_fill",
                        [xn, saved = std::move(saved)](Node& o) {
                          auto gx = grad_target(xn);
                          if (!gx) return;
                          for (size_t i = 0; i < saved.size(); ++i) {
                            if (!saved[i]) gx->grad[i] += o.grad[i];
                          }
                        });
}

Tensor causal_mask(const Tensor& x) {
  if (x.dim() < 2 || x.size(-1) != x.size(-2)) {
    throw ShapeError("causal_mask: expects [..., T, T], got " + shape_str(x.shape()));
  }
  const std::int64_t t = x.size(-1);
  std::vector<std::uint8_t> mask(x.numel());
  for (size_t i = 0; i < mask.size(); ++i) {
    const std::int64_t row = (static_cast<std::int64_t>(i) / t) % t;
    const std::int64_t col = static_cast<std::int64_t>(i) % t;
    mask[i] = col > row;
  }
  return masked_fill(x, mask, kNegInf);
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const std::int64_t na = last_dim(a, "concat_last");
  const std::int64_t nb = last_dim(b, "concat_last");
  if (drop_last(a.shape()) != drop_last(b.shape())) {
    throw ShapeError("concat_last: leading dims differ for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::int64_t rows = shape_numel(drop_last(a.shape()));
  const std::int64_t w = na + nb;
  std::vector<double> out(rows * w);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(ad.begin() + r * na, na, out.begin() + r * w);
    std::copy_n(bd.begin() + r * nb, nb, out.begin() + r * w + na);
  }
  Shape shape = drop_last(a.shape());
  shape.push_back(w);
  NodePtr an = a.node(), bn = b.node();
  return make_op_result(std::move(shape), std::move(out), {a, b}, "concat_last",
                        [an, bn, rows, na, nb, w](Node& o) {
                          auto ga = grad_target(an);
                          auto gb = grad_target(bn);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            if (ga) {
                              for (std::int64_t j = 0; j < na; ++j) ga->grad[r * na + j] += o.grad[r * w + j];
                            }
                            if (gb) {
                              for (std::int64_t j = 0; j < nb; ++j) gb->grad[r * nb + j] += o.grad[r * w + na + j];
                            }
                          }
                        });
}

Tensor pick_last(const Tensor& x, std::span<const std::int64_t> indices) {
  const std::int64_t d = last_dim(x, "pick_last");
  const std::int64_t rows = shape_numel(drop_last(x.shape()));
  if (static_cast<std::int64_t>(indices.size()) != rows) {
    throw ShapeError("pick_last: " + std::to_string(indices.size()) + " indices for shape " +
                     shape_str(x.shape()));
  }
  const auto xd = x.data();
  std::vector<double> out(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    if (indices[r] < 0 || indices[r] >= d) throw InputError("pick_last: index out of range");
    out[r] = xd[r * d + indices[r]];
  }
  NodePtr xn = x.node();
  std::vector<std::int64_t> saved(indices.begin(), indices.end());
  return make_op_result(drop_last(x.shape()), std::move(out), {x}, "pick_last",
                        [xn, d, saved = std::move(saved)](Node& o) {
                          auto gx = grad_target(xn);
                          if (!gx) return;
                          for (size_t r = 0; r < saved.size(); ++r) gx->grad[r * d + saved[r]] += o.grad[r];
                        });
}

Tensor slice_last(const Tensor& x, std::int64_t index) {
  const std::int64_t d = last_dim(x, "slice_last");
  if (index < 0 || index >= d) throw ShapeError("slice_last: index out of range for " + shape_str(x.shape()));
  const std::int64_t rows = shape_numel(drop_last(x.shape()));
  const auto xd = x.data();
  std::vector<double> out(rows);
  for (std::int64_t r = 0; r < rows; ++r) out[r] = xd[r * d + index];
  Shape shape = drop_last(x.shape());
  shape.push_back(1);
  NodePtr xn = x.node();
  return make_op_result(std::move(shape), std::move(out), {x}, "slice_last", [xn, d, index](Node& o) {
    auto gx = grad_target(xn);
    if (!gx) return;
    for (size_t r = 0; r < o.grad.size(); ++r) gx->grad[r * d + index] += o.grad[r];
  });
}

}  // namespace moelora
