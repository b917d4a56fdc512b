#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "kron/error.hpp"

namespace kron {

enum class DType { F32, F64 };

std::string_view to_string(DType dtype);
DType parse_dtype(std::string_view text);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::F32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::F64;
}

// Dense row-major matrix. Shape is fixed at construction.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  static constexpr DType dtype() noexcept { return dtype_of<T>(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  /// Rows [first, first + count) as a new matrix.
  Matrix row_block(std::size_t first, std::size_t count) const;

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<T> data_;
};

/// Entries drawn uniformly from the integers [-magnitude, magnitude].
template <typename T>
Matrix<T> random_integer_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                int magnitude = 8);

/// Entries drawn uniformly from [-1, 1).
template <typename T>
Matrix<T> random_real_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// ||a - b||_F / ||b||_F, or ||a - b||_F when b is zero.
template <typename T, typename U>
double relative_frobenius_error(const Matrix<T>& a, const Matrix<U>& b);

struct Mismatch {
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::size_t first_index = 0;  // row-major offset of the first differing entry
  std::size_t count = 0;
};

/// Element-wise comparison against a reference; `count == 0` means equal.
template <typename T, typename U>
Mismatch compare_exact(const Matrix<T>& result, const Matrix<U>& reference);

}  // namespace kron
