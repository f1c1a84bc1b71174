#pragma once

// Reverse-mode automatic differentiation over 2-D tensors.
//
// A Var is a handle to a graph node. Ops build new nodes whose backward closures
// accumulate (add into) their inputs' gradient buffers. When no input of an op
// requires grad, the op records nothing and the result is a plain constant, so
// inference does not pay for graph bookkeeping.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "draftrec/error.hpp"
#include "draftrec/rng.hpp"
#include "draftrec/tensor.hpp"

namespace draftrec::ad {

// Additive mask value for excluded softmax entries.
inline constexpr double kMaskedLogit = -1e9;

template <class T>
struct Node {
  Tensor<T> owned;
  const Tensor<T>* borrowed = nullptr;
  Tensor<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  const Tensor<T>& value() const { return borrowed ? *borrowed : owned; }
  bool has_grad() const { return grad.size() == value().size() && !grad.shape().empty(); }
  Tensor<T>& grad_buffer() {
    if (!has_grad() || grad.shape() != value().shape()) grad = Tensor<T>(value().shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> v) { return make(std::move(v), false); }
  static Var leaf(Tensor<T> v, bool requires_grad = true) { return make(std::move(v), requires_grad); }
  // Leaf that reads `v` in place; `v` must outlive every graph built on it.
  static Var borrow(const Tensor<T>& v, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->borrowed = &v;
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(n_); }
  const Tensor<T>& value() const { return n_->value(); }
  const Shape& shape() const { return n_->value().shape(); }
  std::size_t rows() const { return n_->value().rows(); }
  std::size_t cols() const { return n_->value().cols(); }
  bool requires_grad() const noexcept { return n_ && n_->requires_grad; }
  // Accumulated gradient; an empty tensor when nothing has flowed in yet.
  const Tensor<T>& grad() const { return n_->grad; }
  void zero_grad() { n_->grad = Tensor<T>(); }

  Node<T>* node() const noexcept { return n_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const noexcept { return n_; }

  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

 private:
  static Var make(Tensor<T> v, bool rg) {
    auto n = std::make_shared<Node<T>>();
    n->owned = std::move(v);
    n->requires_grad = rg;
    return Var(std::move(n));
  }
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <class T>
void check_finite(const char* op, const Tensor<T>& t) {
  if (has_nan<T>(t.span())) throw NumericError(std::string(op) + ": NaN in input");
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class T>
void require_matrix(const char* op, const Var<T>& x) {
  if (x.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

// Wraps `out` as the result of `op`. The closure is kept only when some input
// requires grad.
template <class T, class F>
Var<T> record(const char* op, Tensor<T> out, std::vector<Var<T>> ins, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->owned = std::move(out);
  n->op = op;
  bool any = false;
  for (const auto& v : ins) any = any || v.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(ins.size());
    for (auto& v : ins) n->inputs.push_back(v.ptr());
    n->backward = std::forward<F>(backward);
  }
  return Var<T>(std::move(n));
}

template <class T>
Tensor<T>* grad_of(Node<T>& n, std::size_t i) {
  auto& in = *n.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace detail

// Runs reverse accumulation from a scalar root. Gradients add into existing buffers.
template <class T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1)
    throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node<T>* child = n->inputs[idx++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) detail::shape_fail("matmul", a.shape(), b.shape());
  detail::check_finite("matmul", a.value());
  detail::check_finite("matmul", b.value());
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernel::gemm_nn(m, k, n, a.value().data(), b.value().data(), out.data());
  return detail::record<T>("matmul", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const T* g = self.grad.data();
    if (auto* ga = detail::grad_of(self, 0))
      kernel::gemm_nt(m, n, k, g, self.inputs[1]->value().data(), ga->data());
    if (auto* gb = detail::grad_of(self, 1))
      kernel::gemm_tn(m, k, n, self.inputs[0]->value().data(), g, gb->data());
  });
}

// a[m x k] * b[n x k]^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::require_matrix("matmul_nt", a);
  detail::require_matrix("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) detail::shape_fail("matmul_nt", a.shape(), b.shape());
  detail::check_finite("matmul_nt", a.value());
  detail::check_finite("matmul_nt", b.value());
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernel::gemm_nt(m, k, n, a.value().data(), b.value().data(), out.data());
  return detail::record<T>("matmul_nt", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const T* g = self.grad.data();
    if (auto* ga = detail::grad_of(self, 0))
      kernel::gemm_nn(m, n, k, g, self.inputs[1]->value().data(), ga->data());
    if (auto* gb = detail::grad_of(self, 1))
      kernel::gemm_tn(m, n, k, g, self.inputs[0]->value().data(), gb->data());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) detail::shape_fail("add", a.shape(), b.shape());
  detail::check_finite("add", a.value());
  detail::check_finite("add", b.value());
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::record<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t s = 0; s < 2; ++s)
      if (auto* gi = detail::grad_of(self, s))
        for (std::size_t i = 0; i < gi->size(); ++i) (*gi)[i] += self.grad[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) detail::shape_fail("sub", a.shape(), b.shape());
  detail::check_finite("sub", a.value());
  detail::check_finite("sub", b.value());
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::record<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= self.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) detail::shape_fail("mul", a.shape(), b.shape());
  detail::check_finite("mul", a.value());
  detail::check_finite("mul", b.value());
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::record<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value();
    const auto& bv = self.inputs[1]->value();
    if (auto* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    if (auto* gb = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * av[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  detail::check_finite("scale", a.value());
  Tensor<T> out = a.value();
  for (auto& x : out.values()) x *= s;
  return detail::record<T>("scale", std::move(out), {a}, [s](Node<T>& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * s;
  });
}

// x[m x n] + bias broadcast over rows; bias holds n values (any shape).
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  detail::require_matrix("add_bias", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.value().size() != n) detail::shape_fail("add_bias", x.shape(), bias.shape());
  detail::check_finite("add_bias", x.value());
  detail::check_finite("add_bias", bias.value());
  Tensor<T> out = x.value();
  const T* b = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* r = out.row(i);
    for (std::size_t j = 0; j < n; ++j) r[j] += b[j];
  }
  return detail::record<T>("add_bias", std::move(out), {x, bias}, [m, n](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    if (auto* gb = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < m; ++i) {
        const T* g = self.grad.row(i);
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[j];
      }
  });
}

// Mean over an axis of a matrix: axis 0 -> [1 x n], axis 1 -> [m x 1].
template <class T>
Var<T> mean_axis(const Var<T>& x, int axis) {
  detail::require_matrix("mean_axis", x);
  detail::check_finite("mean_axis", x.value());
  const std::size_t m = x.rows(), n = x.cols();
  if (axis != 0 && axis != 1) throw ShapeError("mean_axis: axis must be 0 or 1");
  Tensor<T> out = axis == 0 ? Tensor<T>::matrix(1, n) : Tensor<T>::matrix(m, 1);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += xv(i, j);
  const T inv = T(1) / static_cast<T>(axis == 0 ? m : n);
  for (auto& v : out.values()) v *= inv;
  return detail::record<T>("mean_axis", std::move(out), {x}, [m, n, axis, inv](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gx)(i, j) += self.grad[axis == 0 ? j : i] * inv;
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  detail::check_finite("sum", x.value());
  T s{};
  for (T v : x.value().values()) s += v;
  return detail::record<T>("sum", Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (auto& v : gx->values()) v += self.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <class T>
Var<T> sum_squares(const Var<T>& x) {
  detail::check_finite("sum_squares", x.value());
  T s{};
  for (T v : x.value().values()) s += v * v;
  return detail::record<T>("sum_squares", Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0)) {
      const auto& xv = self.inputs[0]->value();
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += T(2) * xv[i] * self.grad[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Row selection

// Rows of `table` at `ids`. Rows whose id equals `pad` are zero and receive no gradient.
template <class T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& ids, int pad = 0) {
  detail::require_matrix("embedding", table);
  detail::check_finite("embedding", table.value());
  const std::size_t vocab = table.rows(), d = table.cols();
  Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw Error("embedding: id " + std::to_string(id) + " out of range for vocabulary of " +
                  std::to_string(vocab));
    if (id == pad) continue;
    std::copy_n(table.value().row(static_cast<std::size_t>(id)), d, out.row(i));
  }
  return detail::record<T>("embedding", std::move(out), {table}, [ids, pad, d](Node<T>& self) {
    if (auto* gt = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == pad) continue;
        T* dst = gt->row(static_cast<std::size_t>(ids[i]));
        const T* g = self.grad.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
  });
}

template <class T>
Var<T> select_rows(const Var<T>& x, const std::vector<std::size_t>& idx) {
  detail::require_matrix("select_rows", x);
  const std::size_t m = x.rows(), d = x.cols();
  Tensor<T> out = Tensor<T>::matrix(idx.size(), d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw ShapeError("select_rows: row " + std::to_string(idx[i]) + " of " + shape_str(x.shape()));
    std::copy_n(x.value().row(idx[i]), d, out.row(i));
  }
  return detail::record<T>("select_rows", std::move(out), {x}, [idx, d](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = gx->row(idx[i]);
        const T* g = self.grad.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
  });
}

// Output row r is the mean of x's rows listed in groups[r].
template <class T>
Var<T> pool_rows(const Var<T>& x, const std::vector<std::vector<std::size_t>>& groups) {
  detail::require_matrix("pool_rows", x);
  detail::check_finite("pool_rows", x.value());
  const std::size_t d = x.cols();
  Tensor<T> out = Tensor<T>::matrix(groups.size(), d);
  for (std::size_t r = 0; r < groups.size(); ++r) {
    if (groups[r].empty()) throw ShapeError("pool_rows: empty group");
    T* o = out.row(r);
    for (std::size_t src : groups[r]) {
      if (src >= x.rows()) throw ShapeError("pool_rows: row index out of range");
      const T* xr = x.value().row(src);
      for (std::size_t j = 0; j < d; ++j) o[j] += xr[j];
    }
    const T inv = T(1) / static_cast<T>(groups[r].size());
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  return detail::record<T>("pool_rows", std::move(out), {x}, [groups, d](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t r = 0; r < groups.size(); ++r) {
        const T inv = T(1) / static_cast<T>(groups[r].size());
        const T* g = self.grad.row(r);
        for (std::size_t src : groups[r]) {
          T* dst = gx->row(src);
          for (std::size_t j = 0; j < d; ++j) dst[j] += g[j] * inv;
        }
      }
  });
}

// axis 0 stacks rows, axis 1 joins columns.
template <class T>
Var<T> concat(const Var<T>& a, const Var<T>& b, int axis) {
  detail::require_matrix("concat", a);
  detail::require_matrix("concat", b);
  detail::check_finite("concat", a.value());
  detail::check_finite("concat", b.value());
  const std::size_t ma = a.rows(), na = a.cols(), mb = b.rows(), nb = b.cols();
  if (axis == 0) {
    if (na != nb) detail::shape_fail("concat", a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::matrix(ma + mb, na);
    std::copy(a.value().values().begin(), a.value().values().end(), out.data());
    std::copy(b.value().values().begin(), b.value().values().end(), out.data() + ma * na);
    return detail::record<T>("concat", std::move(out), {a, b}, [ma, na](Node<T>& self) {
      if (auto* ga = detail::grad_of(self, 0))
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
      if (auto* gb = detail::grad_of(self, 1))
        for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[ma * na + i];
    });
  }
  if (axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  if (ma != mb) detail::shape_fail("concat", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::matrix(ma, na + nb);
  for (std::size_t i = 0; i < ma; ++i) {
    std::copy_n(a.value().row(i), na, out.row(i));
    std::copy_n(b.value().row(i), nb, out.row(i) + na);
  }
  return detail::record<T>("concat", std::move(out), {a, b}, [ma, na, nb](Node<T>& self) {
    auto* ga = detail::grad_of(self, 0);
    auto* gb = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < ma; ++i) {
      const T* g = self.grad.row(i);
      if (ga)
        for (std::size_t j = 0; j < na; ++j) (*ga)(i, j) += g[j];
      if (gb)
        for (std::size_t j = 0; j < nb; ++j) (*gb)(i, j) += g[na + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <class T>
Var<T> gelu(const Var<T>& x) {
  detail::check_finite("gelu", x.value());
  Tensor<T> out = x.value();
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return detail::record<T>("gelu", std::move(out), {x}, [inv_sqrt2](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0)) {
      const auto& xv = self.inputs[0]->value();
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        (*gx)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

template <class T>
T sigmoid_value(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  detail::check_finite("sigmoid", x.value());
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = sigmoid_value(v);
  return detail::record<T>("sigmoid", std::move(out), {x}, [](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0)) {
      const auto& y = self.owned;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * y[i] * (T(1) - y[i]);
    }
  });
}

namespace detail {

// In-place numerically stable softmax of one row of length n.
template <class T>
void softmax_row(T* r, std::size_t n) {
  T mx = r[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
  T s{};
  for (std::size_t j = 0; j < n; ++j) {
    r[j] = std::exp(r[j] - mx);
    s += r[j];
  }
  const T inv = T(1) / s;
  for (std::size_t j = 0; j < n; ++j) r[j] *= inv;
}

template <class T>
const T* mask_row(const Tensor<T>* mask, std::size_t i) {
  if (!mask || mask->size() == 0) return nullptr;
  return mask->rows() == 1 ? mask->data() : mask->row(i);
}

template <class T>
void check_mask(const char* op, const Var<T>& x, const Tensor<T>* mask) {
  if (!mask || mask->size() == 0) return;
  if (mask->cols() != x.cols() || (mask->rows() != 1 && mask->rows() != x.rows()))
    shape_fail(op, x.shape(), mask->shape());
}

}  // namespace detail

// Softmax over the last axis of x + mask. `mask` is [1 x n] or [m x n] holding 0
// or kMaskedLogit; it does not take part in differentiation.
template <class T>
Var<T> softmax(const Var<T>& x, const Tensor<T>* mask = nullptr) {
  detail::require_matrix("softmax", x);
  detail::check_finite("softmax", x.value());
  detail::check_mask("softmax", x, mask);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    T* r = out.row(i);
    if (const T* mk = detail::mask_row(mask, i))
      for (std::size_t j = 0; j < n; ++j) r[j] += mk[j];
    detail::softmax_row(r, n);
  }
  return detail::record<T>("softmax", std::move(out), {x}, [m, n](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i) {
        const T* y = self.owned.row(i);
        const T* g = self.grad.row(i);
        const T dotp = kernel::dot(n, y, g);
        T* dst = gx->row(i);
        for (std::size_t j = 0; j < n; ++j) dst[j] += y[j] * (g[j] - dotp);
      }
  });
}

// Inverted dropout; identity (the same handle) when rng is null or p == 0.
template <class T>
Var<T> dropout(const Var<T>& x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout: rate must be < 1");
  detail::check_finite("dropout", x.value());
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  std::vector<T> keep(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = rng->uniform() >= p ? keep_scale : T(0);
    out[i] *= keep[i];
  }
  return detail::record<T>("dropout", std::move(out), {x}, [keep = std::move(keep)](Node<T>& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * keep[i];
  });
}

// Row-wise layer normalization with affine gain and bias (each of length n).
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  detail::require_matrix("layer_norm", x);
  detail::check_finite("layer_norm", x.value());
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.value().size() != n || bias.value().size() != n)
    detail::shape_fail("layer_norm", x.shape(), gain.shape());
  Tensor<T> xhat = x.value();
  std::vector<T> inv_std(m);
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const T* gv = gain.value().data();
  const T* bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* r = xhat.row(i);
    T mu{};
    for (std::size_t j = 0; j < n; ++j) mu += r[j];
    mu /= static_cast<T>(n);
    T var{};
    for (std::size_t j = 0; j < n; ++j) {
      r[j] -= mu;
      var += r[j] * r[j];
    }
    var /= static_cast<T>(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    T* o = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      r[j] *= inv_std[i];
      o[j] = r[j] * gv[j] + bv[j];
    }
  }
  return detail::record<T>(
      "layer_norm", std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto* gx = detail::grad_of(self, 0);
        auto* gg = detail::grad_of(self, 1);
        auto* gb = detail::grad_of(self, 2);
        const T* gv = self.inputs[1]->value().data();
        std::vector<T> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = self.grad.row(i);
          const T* xh = xhat.row(i);
          if (gg)
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += g[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[j];
          if (gx) {
            T mean_d{}, mean_dx{};
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g[j] * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xh[j];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            T* dst = gx->row(i);
            for (std::size_t j = 0; j < n; ++j) dst[j] += inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses (each returns an [m x 1] column of per-row losses)

// -log softmax(x + mask)[target] per row. A target whose mask entry excludes it
// is a hard error: its probability is zero by construction.
template <class T>
Var<T> softmax_nll(const Var<T>& logits, const std::vector<int>& targets, const Tensor<T>* mask = nullptr) {
  detail::require_matrix("softmax_nll", logits);
  detail::check_finite("softmax_nll", logits.value());
  detail::check_mask("softmax_nll", logits, mask);
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) throw ShapeError("softmax_nll: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  Tensor<T> probs = logits.value();
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= n) throw ShapeError("softmax_nll: target out of range");
    T* r = probs.row(i);
    const T* mk = detail::mask_row(mask, i);
    if (mk) {
      if (mk[t] <= T(kMaskedLogit / 2))
        throw NumericError("softmax_nll: target " + std::to_string(t) + " is masked out (zero probability)");
      for (std::size_t j = 0; j < n; ++j) r[j] += mk[j];
    }
    T mx = r[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
    T s{};
    for (std::size_t j = 0; j < n; ++j) s += std::exp(r[j] - mx);
    const T lse = mx + std::log(s);
    out[i] = lse - r[t];
    for (std::size_t j = 0; j < n; ++j) r[j] = std::exp(r[j] - lse);
  }
  return detail::record<T>("softmax_nll", std::move(out), {logits},
                           [m, n, targets, probs = std::move(probs)](Node<T>& self) {
                             if (auto* gx = detail::grad_of(self, 0))
                               for (std::size_t i = 0; i < m; ++i) {
                                 const T g = self.grad[i];
                                 const T* p = probs.row(i);
                                 T* dst = gx->row(i);
                                 for (std::size_t j = 0; j < n; ++j) dst[j] += g * p[j];
                                 dst[targets[i]] -= g;
                               }
                           });
}

// Binary cross-entropy of sigmoid(z) against targets in {0,1}; z is [m x 1].
template <class T>
Var<T> sigmoid_bce(const Var<T>& z, const std::vector<T>& targets) {
  detail::check_finite("sigmoid_bce", z.value());
  const std::size_t m = z.value().size();
  if (targets.size() != m) throw ShapeError("sigmoid_bce: target count mismatch");
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const T v = z.value()[i];
    out[i] = std::max(v, T(0)) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  return detail::record<T>("sigmoid_bce", std::move(out), {z}, [m, targets](Node<T>& self) {
    if (auto* gz = detail::grad_of(self, 0)) {
      const auto& zv = self.inputs[0]->value();
      for (std::size_t i = 0; i < m; ++i) (*gz)[i] += self.grad[i] * (sigmoid_value(zv[i]) - targets[i]);
    }
  });
}

// Sum over unmasked classes of elementwise BCE between probabilities and a one-hot target.
template <class T>
Var<T> onehot_bce(const Var<T>& probs, const std::vector<int>& targets, const Tensor<T>* mask = nullptr) {
  detail::require_matrix("onehot_bce", probs);
  detail::check_finite("onehot_bce", probs.value());
  detail::check_mask("onehot_bce", probs, mask);
  const std::size_t m = probs.rows(), n = probs.cols();
  if (targets.size() != m) throw ShapeError("onehot_bce: target count mismatch");
  constexpr T kClamp = T(1e-7);
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const T* p = probs.value().row(i);
    const T* mk = detail::mask_row(mask, i);
    T s{};
    for (std::size_t j = 0; j < n; ++j) {
      if (mk && mk[j] <= T(kMaskedLogit / 2)) continue;
      const T pj = std::clamp(p[j], kClamp, T(1) - kClamp);
      s -= (static_cast<int>(j) == targets[i]) ? std::log(pj) : std::log(T(1) - pj);
    }
    out[i] = s;
  }
  return detail::record<T>("onehot_bce", std::move(out), {probs},
                           [m, n, targets, mask_copy = mask ? *mask : Tensor<T>()](Node<T>& self) {
                             if (auto* gp = detail::grad_of(self, 0)) {
                               const auto& pv = self.inputs[0]->value();
                               for (std::size_t i = 0; i < m; ++i) {
                                 const T* mk = detail::mask_row(&mask_copy, i);
                                 for (std::size_t j = 0; j < n; ++j) {
                                   if (mk && mk[j] <= T(kMaskedLogit / 2)) continue;
                                   const T pj = pv(i, j);
                                   if (pj <= kClamp || pj >= T(1) - kClamp) continue;
                                   const T d = static_cast<int>(j) == targets[i] ? -T(1) / pj : T(1) / (T(1) - pj);
                                   (*gp)(i, j) += self.grad[i] * d;
                                 }
                               }
                             }
                           });
}

// ---------------------------------------------------------------------------
// Fused multi-head self-attention
//
// q, k, v are [S*len x H*dh]: S independent segments of `len` rows each, with H
// heads of width dh laid side by side. key_mask (optional) is [S x len] additive.
// Returns softmax(q k^T / sqrt(dh) + mask) v per segment and head. When `probs_out`
// is given it receives the attention weights as [S*H*len x len] (pre-dropout).

struct AttentionSpec {
  std::size_t segment_len = 0;
  std::size_t heads = 1;
  double dropout = 0.0;
};

template <class T>
Var<T> multihead_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionSpec& spec,
                           const Tensor<T>* key_mask, Rng* rng, Tensor<T>* probs_out = nullptr) {
  detail::require_matrix("multihead_attention", q);
  if (q.shape() != k.shape() || q.shape() != v.shape())
    detail::shape_fail("multihead_attention", q.shape(), k.shape());
  detail::check_finite("multihead_attention", q.value());
  detail::check_finite("multihead_attention", k.value());
  detail::check_finite("multihead_attention", v.value());
  const std::size_t len = spec.segment_len, H = spec.heads, width = q.cols();
  if (len == 0 || q.rows() % len != 0 || H == 0 || width % H != 0)
    throw ShapeError("multihead_attention: rows " + std::to_string(q.rows()) + " not divisible into segments of " +
                     std::to_string(len) + " / width " + std::to_string(width) + " into " + std::to_string(H) + " heads");
  const std::size_t S = q.rows() / len, dh = width / H;
  if (key_mask && key_mask->size() && (key_mask->rows() != S || key_mask->cols() != len))
    throw ShapeError("multihead_attention: key mask " + shape_str(key_mask->shape()) + " for " + std::to_string(S) +
                     " segments of " + std::to_string(len));
  const T scale_f = T(1) / std::sqrt(static_cast<T>(dh));
  const bool drop = rng != nullptr && spec.dropout > 0.0;
  const T keep_scale = drop ? T(1) / static_cast<T>(1.0 - spec.dropout) : T(1);

  Tensor<T> probs = Tensor<T>::matrix(S * H * len, len);
  Tensor<T> dropped;  // probabilities after dropout; equals probs when not dropping
  if (drop) dropped = Tensor<T>::matrix(S * H * len, len);
  Tensor<T> out = Tensor<T>::matrix(S * len, width);
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  for (std::size_t s = 0; s < S; ++s) {
    const T* mk = (key_mask && key_mask->size()) ? key_mask->row(s) : nullptr;
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        T* p = probs.row((s * H + h) * len + i);
        const T* qi = Q.row(s * len + i) + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] = kernel::dot(dh, qi, K.row(s * len + j) + h * dh) * scale_f;
          if (mk) p[j] += mk[j];
        }
        detail::softmax_row(p, len);
        const T* a = p;
        if (drop) {
          T* dr = dropped.row((s * H + h) * len + i);
          for (std::size_t j = 0; j < len; ++j) dr[j] = rng->uniform() >= spec.dropout ? p[j] * keep_scale : T(0);
          a = dr;
        }
        T* o = out.row(s * len + i) + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const T w = a[j];
          const T* vj = V.row(s * len + j) + h * dh;
          for (std::size_t e = 0; e < dh; ++e) o[e] += w * vj[e];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;
  return detail::record<T>(
      "multihead_attention", std::move(out), {q, k, v},
      [S, H, len, dh, scale_f, drop, keep_scale, probs = std::move(probs), dropped = std::move(dropped)](Node<T>& self) {
        const auto& Q = self.inputs[0]->value();
        const auto& K = self.inputs[1]->value();
        const auto& V = self.inputs[2]->value();
        auto* gq = detail::grad_of(self, 0);
        auto* gk = detail::grad_of(self, 1);
        auto* gv = detail::grad_of(self, 2);
        std::vector<T> da(len), ds(len);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t prow = (s * H + h) * len + i;
              const T* p = probs.row(prow);
              const T* a = drop ? dropped.row(prow) : p;
              const T* go = self.grad.row(s * len + i) + h * dh;
              for (std::size_t j = 0; j < len; ++j) {
                da[j] = kernel::dot(dh, go, V.row(s * len + j) + h * dh);
                if (gv) {
                  T* dst = gv->row(s * len + j) + h * dh;
                  const T w = a[j];
                  for (std::size_t e = 0; e < dh; ++e) dst[e] += w * go[e];
                }
              }
              // back through dropout then softmax
              if (drop)
                for (std::size_t j = 0; j < len; ++j) da[j] = a[j] != T(0) ? da[j] * keep_scale : T(0);
              const T dotp = kernel::dot(len, p, da.data());
              for (std::size_t j = 0; j < len; ++j) ds[j] = p[j] * (da[j] - dotp) * scale_f;
              const T* qi = Q.row(s * len + i) + h * dh;
              for (std::size_t j = 0; j < len; ++j) {
                const T w = ds[j];
                if (w == T(0)) continue;
                if (gq) {
                  T* dst = gq->row(s * len + i) + h * dh;
                  const T* kj = K.row(s * len + j) + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) dst[e] += w * kj[e];
                }
                if (gk) {
                  T* dst = gk->row(s * len + j) + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) dst[e] += w * qi[e];
                }
              }
            }
      });
}

}  // namespace draftrec::ad
