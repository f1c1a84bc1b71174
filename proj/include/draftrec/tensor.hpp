#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "draftrec/error.hpp"

namespace draftrec {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major buffer. Invariant: numel(shape) == data.size().
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{}) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty() && shape_.empty(); }

  // 2-D views; a rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  T* row(std::size_t r) noexcept { return data_.data() + r * cols(); }
  const T* row(std::size_t r) const noexcept { return data_.data() + r * cols(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s) {
    if (shape_numel(s) != data_.size())
      throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(s));
    shape_ = std::move(s);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
bool has_nan(std::span<const T> v) {
  for (T x : v)
    if (std::isnan(x)) return true;
  return false;
}

namespace kernel {

// out[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out + i * n;
    const T* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[k x n] += a^T * g  where a is [m x k], g is [m x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    const T* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      T* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

inline constexpr std::size_t kTransposeBlock = 32;

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  for (std::size_t r0 = 0; r0 < rows; r0 += kTransposeBlock)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTransposeBlock) {
      const std::size_t r1 = std::min(rows, r0 + kTransposeBlock);
      const std::size_t c1 = std::min(cols, c0 + kTransposeBlock);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
}

// out[m x n] += a[m x k] * b^T where b is [n x k]
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  std::vector<T> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, k, n, a, bt.data(), out);
}

template <class T>
T dot(std::size_t n, const T* a, const T* b) {
  T s{};
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace kernel
}  // namespace draftrec
