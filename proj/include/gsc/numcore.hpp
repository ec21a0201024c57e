#ifndef GSC_NUMCORE_HPP
#define GSC_NUMCORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gsc/error.hpp"

namespace gsc {

/// Dense vector of finite doubles.
///
/// Every constructor taking data rejects empty input and NaN/Inf entries, so
/// any Vector reaching the engine is usable by the bounds downstream. A
/// default-constructed Vector is an empty placeholder that every operation
/// rejects.
class Vector {
 public:
  Vector() = default;

  explicit Vector(std::vector<double> data) : data_(std::move(data)) { validate(); }

  Vector(std::initializer_list<double> values) : data_(values) { validate(); }

  static Vector zeros(std::size_t n) {
    if (n == 0) throw Error(ErrorCode::dimension, "vector length must be positive");
    Vector v;
    v.data_.assign(n, 0.0);
    return v;
  }

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  void validate() const {
    if (data_.empty()) throw Error(ErrorCode::dimension, "vector length must be positive");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error(ErrorCode::non_finite, "vector entry " + std::to_string(i) + " is not finite");
      }
    }
  }

  std::vector<double> data_;
};

/// Row-major dense matrix of finite doubles.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ == 0 || cols_ == 0) throw Error(ErrorCode::dimension, "matrix dims must be positive");
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::dimension, "matrix data length " + std::to_string(data_.size()) +
                                            " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (double x : data_) {
      if (!std::isfinite(x)) throw Error(ErrorCode::non_finite, "matrix entry is not finite");
    }
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols, std::vector<double>(rows * cols, 0.0));
  }

  static Matrix identity(std::size_t n) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return Matrix(n, n, std::move(data));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  const std::vector<double>& values() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_nonempty(std::span<const double> v, const char* what) {
  if (v.empty()) throw Error(ErrorCode::dimension, std::string(what) + ": empty input");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::dimension,
                "dot: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  return detail::dot(a.span(), b.span());
}

inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size() || v.empty()) {
    throw Error(ErrorCode::dimension,
                "matvec: matrix has " + std::to_string(m.cols()) + " cols, vector has " + std::to_string(v.size()));
  }
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = detail::dot(m.row(r), v.span());
  return Vector(std::move(out));
}

/// log(sum_j exp(v_j)), shifted by max(v) so it stays finite for any finite input.
inline double logsumexp(std::span<const double> v) {
  detail::require_nonempty(v, "logsumexp");
  const double top = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

inline double logsumexp(const Vector& v) { return logsumexp(v.span()); }

inline Vector softmax(const Vector& v) {
  detail::require_nonempty(v.span(), "softmax");
  const double top = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - top);
    acc += out[i];
  }
  for (double& x : out) x /= acc;
  return Vector(std::move(out));
}

/// Lowest index attaining the maximum.
inline std::size_t argmax(std::span<const double> v) {
  detail::require_nonempty(v, "argmax");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline std::size_t argmax(const Vector& v) { return argmax(v.span()); }

// Small elementwise helpers used across the engine.

inline Vector add(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension, "add: length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return Vector(std::move(out));
}

inline Vector sub(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension, "sub: length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return Vector(std::move(out));
}

inline Vector scale(const Vector& a, double s) {
  std::vector<double> out(a.values());
  for (double& x : out) x *= s;
  return Vector(std::move(out));
}

inline double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double norm_inf(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc = std::max(acc, std::abs(x));
  return acc;
}

inline double norm1(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc;
}

inline double norm2(const Vector& v) { return norm2(v.span()); }
inline double norm_inf(const Vector& v) { return norm_inf(v.span()); }
inline double norm1(const Vector& v) { return norm1(v.span()); }

}  // namespace gsc

#endif  // GSC_NUMCORE_HPP
