#include "kron/matrix.hpp"

#include <cmath>
#include <string>

namespace kron {

std::string_view to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view text) {
  if (text == "f32") return DType::F32;
  if (text == "f64") return DType::F64;
  throw ConfigError("unknown dtype '" + std::string(text) + "' (expected f32 or f64)");
}

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols)
    : Matrix(rows, cols, std::vector<T>(rows * cols, T{0})) {}

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw DimensionError("matrix must have at least one row and one column");
  }
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

template <typename T>
Matrix<T> Matrix<T>::identity(std::size_t n) {
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
  return out;
}

template <typename T>
Matrix<T> Matrix<T>::row_block(std::size_t first, std::size_t count) const {
  if (first + count > rows_ || count == 0) {
    throw DimensionError("row block out of range");
  }
  auto begin = data_.begin() + static_cast<std::ptrdiff_t>(first * cols_);
  return Matrix(count, cols_,
                std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(count * cols_)));
}

template <typename T>
Matrix<T> random_integer_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                int magnitude) {
  std::uniform_int_distribution<int> dist(-magnitude, magnitude);
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Matrix<T>(rows, cols, std::move(data));
}

template <typename T>
Matrix<T> random_real_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Matrix<T>(rows, cols, std::move(data));
}

template <typename T, typename U>
double relative_frobenius_error(const Matrix<T>& a, const Matrix<U>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("relative_frobenius_error: shape mismatch");
  }
  double diff = 0.0;
  double norm = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    diff += d * d;
    norm += static_cast<double>(db[i]) * static_cast<double>(db[i]);
  }
  return norm == 0.0 ? std::sqrt(diff) : std::sqrt(diff / norm);
}

template <typename T, typename U>
Mismatch compare_exact(const Matrix<T>& result, const Matrix<U>& reference) {
  if (result.rows() != reference.rows() || result.cols() != reference.cols()) {
    throw DimensionError("compare_exact: shape mismatch");
  }
  Mismatch m;
  auto dr = result.data();
  auto dref = reference.data();
  for (std::size_t i = 0; i < dr.size(); ++i) {
    const double a = static_cast<double>(dr[i]);
    const double b = static_cast<double>(dref[i]);
    if (a == b) continue;
    if (m.count == 0) m.first_index = i;
    ++m.count;
    const double abs_err = std::fabs(a - b);
    m.max_abs = std::max(m.max_abs, abs_err);
    m.max_rel = std::max(m.max_rel, b == 0.0 ? abs_err : abs_err / std::fabs(b));
  }
  return m;
}

template class Matrix<float>;
template class Matrix<double>;
template Matrix<float> random_integer_matrix(std::size_t, std::size_t, std::mt19937_64&, int);
template Matrix<double> random_integer_matrix(std::size_t, std::size_t, std::mt19937_64&, int);
template Matrix<float> random_real_matrix(std::size_t, std::size_t, std::mt19937_64&);
template Matrix<double> random_real_matrix(std::size_t, std::size_t, std::mt19937_64&);
template double relative_frobenius_error(const Matrix<float>&, const Matrix<float>&);
template double relative_frobenius_error(const Matrix<double>&, const Matrix<double>&);
template double relative_frobenius_error(const Matrix<float>&, const Matrix<double>&);
template Mismatch compare_exact(const Matrix<float>&, const Matrix<float>&);
template Mismatch compare_exact(const Matrix<double>&, const Matrix<double>&);
template Mismatch compare_exact(const Matrix<float>&, const Matrix<double>&);

}  // namespace kron
