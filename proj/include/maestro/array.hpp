#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "maestro/common.hpp"

namespace maestro {

/// Dense row-major array of real values. Rank is the length of `shape`;
/// scalars use shape {1}.
template <typename T>
struct Array {
  std::vector<i64> shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(std::vector<i64> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  Array(std::vector<i64> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(numel_of(shape) == static_cast<i64>(data.size()),
            "Array: shape/data size mismatch: " + shape_str() + " vs " +
                std::to_string(data.size()) + " values");
  }

  static i64 numel_of(const std::vector<i64>& s) {
    i64 n = 1;
    for (i64 e : s) {
      require(e > 0, "Array: extents must be positive");
      n *= e;
    }
    return n;
  }

  static Array scalar(T v) { return Array({1}, {v}); }

  i64 numel() const { return static_cast<i64>(data.size()); }
  i64 rank() const { return static_cast<i64>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }

  // 2-D accessors.
  i64 rows() const { return shape.empty() ? 1 : shape[0]; }
  i64 cols() const {
    i64 c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }
  T& at(i64 r, i64 c) { return data[static_cast<size_t>(r * cols() + c)]; }
  const T& at(i64 r, i64 c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  T item() const {
    require(is_scalar(), "Array::item: not a scalar, shape " + shape_str());
    return data[0];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
inline Array<T> zeros_like(const Array<T>& a) {
  return Array<T>(a.shape);
}

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
inline void matmul_acc(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (i64 p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
inline void matmul_nt_acc(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (i64 j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = T(0);
      for (i64 p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
inline void matmul_tn_acc(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (i64 p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Stable log(sum(exp(x))) over a contiguous range via max subtraction.
template <typename T>
inline T logsumexp_range(const T* x, i64 n) {
  T m = x[0];
  for (i64 i = 1; i < n; ++i)
    if (x[i] > m) m = x[i];
  if (!std::isfinite(static_cast<double>(m))) return m;  // all -inf
  T s = T(0);
  for (i64 i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

template <typename T>
inline T log_add(T a, T b) {
  if (a == -std::numeric_limits<T>::infinity()) return b;
  if (b == -std::numeric_limits<T>::infinity()) return a;
  T hi = a > b ? a : b;
  T lo = a > b ? b : a;
  return hi + std::log1p(std::exp(lo - hi));
}

}  // namespace maestro
