#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tagat/errors.hpp"

namespace tagat {

/// Dense row-major matrix. Scalar type is selectable: float for training
/// speed, double for verification-grade numerics.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_)
        throw ShapeMismatch("from_rows: ragged row " + std::to_string(r));
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
      ++r;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

using Mat32 = Matrix<float>;
using Mat64 = Matrix<double>;

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
inline T sigmoid(T x) {
  // Split on sign so exp() never overflows.
  if (x >= T{0}) {
    const T e = std::exp(-x);
    return T{1} / (T{1} + e);
  }
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
inline T silu(T x) {
  return x * sigmoid(x);
}

template <typename T>
inline T leaky_relu(T x, T slope) {
  return x > T{0} ? x : slope * x;
}

/// Numerically stable softmax (max-subtraction before exponentiation).
template <typename T>
inline std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw EmptyBatch("softmax: empty input");
  const T m = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T sum{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (T& v : out) v /= sum;
  return out;
}

template <typename T>
inline std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

// ---------------------------------------------------------------------------
// Statistics kernels
// ---------------------------------------------------------------------------

/// Unbiased sample covariance (divisor T-1) of the columns of a T x N
/// time-series matrix.
template <typename T>
Matrix<T> covariance(const Matrix<T>& ts) {
  const std::size_t n_t = ts.rows(), n = ts.cols();
  if (n_t < 2)
    throw ShapeMismatch("covariance: need at least 2 rows, got " + std::to_string(n_t));
  std::vector<T> mean(n, T{0});
  for (std::size_t t = 0; t < n_t; ++t)
    for (std::size_t j = 0; j < n; ++j) mean[j] += ts(t, j);
  for (T& m : mean) m /= static_cast<T>(n_t);

  Matrix<T> cov(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      T acc{0};
      for (std::size_t t = 0; t < n_t; ++t)
        acc += (ts(t, i) - mean[i]) * (ts(t, j) - mean[j]);
      acc /= static_cast<T>(n_t - 1);
      cov(i, j) = acc;
      cov(j, i) = acc;
    }
  }
  return cov;
}

/// Pearson correlation matrix of the columns of a T x N time-series matrix.
/// Symmetric, unit diagonal, entries clamped into [-1, 1].
template <typename T>
Matrix<T> pearson_corr_matrix(const Matrix<T>& ts) {
  const std::size_t n_t = ts.rows(), n = ts.cols();
  if (n_t < 3)
    throw ShapeMismatch("pearson_corr_matrix: need at least 3 rows, got " + std::to_string(n_t));

  std::vector<T> mean(n, T{0});
  for (std::size_t t = 0; t < n_t; ++t)
    for (std::size_t j = 0; j < n; ++j) mean[j] += ts(t, j);
  for (T& m : mean) m /= static_cast<T>(n_t);

  // Centered copy plus per-column norms.
  Matrix<T> dev(n_t, n);
  std::vector<T> norm(n, T{0});
  for (std::size_t t = 0; t < n_t; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      dev(t, j) = ts(t, j) - mean[j];
      norm[j] += dev(t, j) * dev(t, j);
    }
  for (std::size_t j = 0; j < n; ++j) {
    if (norm[j] == T{0}) throw ZeroVarianceColumn(j);
    norm[j] = std::sqrt(norm[j]);
  }

  Matrix<T> corr(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    corr(i, i) = T{1};
    for (std::size_t j = i + 1; j < n; ++j) {
      T dot{0};
      for (std::size_t t = 0; t < n_t; ++t) dot += dev(t, i) * dev(t, j);
      T r = dot / (norm[i] * norm[j]);
      r = std::clamp(r, T{-1}, T{1});
      corr(i, j) = r;
      corr(j, i) = r;
    }
  }
  return corr;
}

/// Inverse of (cov + ridge*I) via Cholesky factorization. Result is
/// symmetrized exactly.
template <typename T>
Matrix<T> precision_ridge(const Matrix<T>& cov, T ridge) {
  const std::size_t n = cov.rows();
  if (cov.cols() != n)
    throw ShapeMismatch("precision_ridge: matrix must be square, got " +
                        std::to_string(n) + "x" + std::to_string(cov.cols()));
  if (!(ridge > T{0})) throw Error("precision_ridge: ridge must be positive");

  // Lower-triangular Cholesky factor of cov + ridge*I.
  Matrix<T> chol(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j; i < n; ++i) {
      T acc = cov(i, j);
      if (i == j) acc += ridge;
      for (std::size_t k = 0; k < j; ++k) acc -= chol(i, k) * chol(j, k);
      if (i == j) {
        if (!(acc > T{0}) || !std::isfinite(static_cast<double>(acc)))
          throw FactorizationFailed("precision_ridge: pivot " + std::to_string(j) +
                                    " not positive definite");
        chol(j, j) = std::sqrt(acc);
      } else {
        chol(i, j) = acc / chol(j, j);
      }
    }
  }

  // Solve (L L^T) x = e_k column by column.
  Matrix<T> inv(n, n);
  std::vector<T> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      T acc = (i == k) ? T{1} : T{0};
      for (std::size_t m = 0; m < i; ++m) acc -= chol(i, m) * y[m];
      y[i] = acc / chol(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      T acc = y[ii];
      for (std::size_t m = ii + 1; m < n; ++m) acc -= chol(m, ii) * inv(m, k);
      inv(ii, k) = acc / chol(ii, ii);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const T s = (inv(i, j) + inv(j, i)) / T{2};
      inv(i, j) = s;
      inv(j, i) = s;
    }
  return inv;
}

/// Partial correlations from a precision matrix:
/// rho_ij = -p_ij / sqrt(p_ii * p_jj), zero diagonal by convention.
template <typename T>
Matrix<T> partial_corr(const Matrix<T>& prec) {
  const std::size_t n = prec.rows();
  if (prec.cols() != n)
    throw ShapeMismatch("partial_corr: matrix must be square, got " +
                        std::to_string(n) + "x" + std::to_string(prec.cols()));
  std::vector<T> rsqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(prec(i, i) > T{0})) throw NonpositiveDiagonal(i);
    rsqrt[i] = T{1} / std::sqrt(prec(i, i));
  }
  Matrix<T> rho(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      rho(i, j) = (i == j) ? T{0} : -prec(i, j) * rsqrt[i] * rsqrt[j];
  return rho;
}

/// Pearson correlation of two equal-length vectors. Returns false (corr
/// undefined) when either side has zero variance.
template <typename T>
bool pearson_corr(std::span<const T> a, std::span<const T> b, T& out) {
  if (a.size() != b.size() || a.empty())
    throw ShapeMismatch("pearson_corr: lengths " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  const std::size_t n = a.size();
  T ma{0}, mb{0};
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<T>(n);
  mb /= static_cast<T>(n);
  T dot{0}, na{0}, nb{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T da = a[i] - ma, db = b[i] - mb;
    dot += da * db;
    na += da * da;
    nb += db * db;
  }
  if (na == T{0} || nb == T{0}) return false;
  out = std::clamp(dot / std::sqrt(na * nb), T{-1}, T{1});
  return true;
}

}  // namespace tagat
