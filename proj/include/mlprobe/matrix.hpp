#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mlprobe/error.hpp"

namespace mlprobe {

/// Dense row-major matrix. Vectors are stored as 1 x n.
template <typename T> class Matrix {
public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("Matrix: data size " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T &operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  const std::vector<T> &values() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix &, const Matrix &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace linalg {

/// out = a * b + bias (bias broadcast over rows, may be empty).
template <typename T>
Matrix<T> affine(const Matrix<T> &a, const Matrix<T> &b, const Matrix<T> &bias) {
  if (a.cols() != b.rows())
    throw ShapeError("affine: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    if (!bias.empty())
      std::copy(bias.flat().begin(), bias.flat().end(), o.begin());
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j)
        o[j] += aik * brow[j];
    }
  }
  return out;
}

/// acc += a^T * b
template <typename T> void accumulate_at_b(const Matrix<T> &a, const Matrix<T> &b, Matrix<T> &acc) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto brow = b.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      auto arow = acc.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j)
        arow[j] += aik * brow[j];
    }
  }
}

/// out = a * b^T
template <typename T> Matrix<T> multiply_abt(const Matrix<T> &a, const Matrix<T> &b) {
  Matrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      T s{};
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

/// Column sums accumulated into a 1 x cols matrix.
template <typename T> void accumulate_column_sums(const Matrix<T> &a, Matrix<T> &acc) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j)
      acc(0, j) += r[j];
  }
}

} // namespace linalg
} // namespace mlprobe
