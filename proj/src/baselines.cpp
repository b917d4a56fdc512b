#include "kron/baselines.hpp"

#include <string>
#include <vector>

namespace kron {

namespace {

void check_slices(std::size_t width, std::size_t p, std::size_t factor) {
  if (width % p != 0) {
    throw DimensionError("factor " + std::to_string(factor + 1) + ": width " +
                         std::to_string(width) + " is not divisible by P=" + std::to_string(p));
  }
}

template <typename T>
Matrix<T> snapshot(const std::vector<T>& buf, std::size_t m, std::size_t width) {
  return Matrix<T>(m, width,
                   std::vector<T>(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(m * width)));
}

}  // namespace

template <typename T>
Matrix<T> shuffle_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                             OpCounters* counters, const std::type_identity_t<StepObserver<T>>& observer) {
  check_input(x, chain);
  const Problem problem(x.rows(), chain.shapes());
  const std::size_t m = x.rows();
  std::vector<T> cur(m * problem.max_interm());
  std::vector<T> tmp(m * problem.max_interm());
  std::copy(x.data().begin(), x.data().end(), cur.begin());

  std::size_t width = problem.k;
  OpCounters c;
  for (std::size_t f = chain.n(); f-- > 0;) {
    const Matrix<T>& fac = chain[f];
    const std::size_t p = fac.rows();
    const std::size_t q = fac.cols();
    check_slices(width, p, f);
    const std::size_t slices = width / p;
    const std::size_t rows = m * slices;

    // (a) (M·K/P × P) · (P × Q) -> tmp as (M·K/P × Q)
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = cur.data() + r * p;
      T* out = tmp.data() + r * q;
      for (std::size_t j = 0; j < q; ++j) {
        T acc{0};
        for (std::size_t k = 0; k < p; ++k) acc += in[k] * fac(k, j);
        out[j] = acc;
      }
    }
    // (b)+(c) view as (M × K/P × Q), swap the last two dims, flatten.
    for (std::size_t i = 0; i < m; ++i) {
      const T* src = tmp.data() + i * slices * q;
      T* dst = cur.data() + i * slices * q;
      for (std::size_t s = 0; s < slices; ++s)
        for (std::size_t j = 0; j < q; ++j) dst[j * slices + s] = src[s * q + j];
    }
    const std::uint64_t out_elems = static_cast<std::uint64_t>(rows) * q;
    c.macs += out_elems * p;
    c.main_loads += out_elems * p + out_elems;
    c.main_stores += out_elems + out_elems;
    width = slices * q;
    if (observer) observer(f, snapshot(cur, m, width));
  }
  if (counters) *counters += c;
  return snapshot(cur, m, width);
}

template <typename T>
Matrix<T> ftmmt_contract(const Matrix<T>& y_in, const Matrix<T>& f) {
  const std::size_t p = f.rows();
  const std::size_t q = f.cols();
  check_slices(y_in.cols(), p, 0);
  const std::size_t slices = y_in.cols() / p;
  Matrix<T> out(y_in.rows(), slices * q);
  for (std::size_t i = 0; i < y_in.rows(); ++i)
    for (std::size_t s = 0; s < slices; ++s)
      for (std::size_t j = 0; j < q; ++j) {
        T acc{0};
        for (std::size_t k = 0; k < p; ++k) acc += y_in(i, s * p + k) * f(k, j);
        out(i, s * q + j) = acc;
      }
  return out;
}

template <typename T>
Matrix<T> ftmmt_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                           OpCounters* counters, const std::type_identity_t<StepObserver<T>>& observer) {
  check_input(x, chain);
  const Problem problem(x.rows(), chain.shapes());
  const std::size_t m = x.rows();
  std::vector<T> cur(m * problem.max_interm());
  std::vector<T> next(m * problem.max_interm());
  std::copy(x.data().begin(), x.data().end(), cur.begin());

  std::size_t width = problem.k;
  OpCounters c;
  for (std::size_t f = chain.n(); f-- > 0;) {
    const Matrix<T>& fac = chain[f];
    const std::size_t p = fac.rows();
    const std::size_t q = fac.cols();
    check_slices(width, p, f);
    const std::size_t slices = width / p;
    // Tensor (M × S × P) contracted on P; the (S, Q) -> (Q, S) transpose is
    // folded into the store index.
    for (std::size_t i = 0; i < m; ++i) {
      const T* in = cur.data() + i * width;
      T* out = next.data() + i * slices * q;
      for (std::size_t s = 0; s < slices; ++s)
        for (std::size_t j = 0; j < q; ++j) {
          T acc{0};
          for (std::size_t k = 0; k < p; ++k) acc += in[s * p + k] * fac(k, j);
          out[j * slices + s] = acc;
        }
    }
    const std::uint64_t out_elems = static_cast<std::uint64_t>(m) * slices * q;
    c.macs += out_elems * p;
    c.main_loads += out_elems * p;
    c.main_stores += out_elems;
    width = slices * q;
    std::swap(cur, next);
    if (observer) observer(f, snapshot(cur, m, width));
  }
  if (counters) *counters += c;
  return snapshot(cur, m, width);
}

template Matrix<float> shuffle_kronmatmul(const Matrix<float>&, const FactorChain<float>&,
                                          OpCounters*, const std::type_identity_t<StepObserver<float>>&);
template Matrix<double> shuffle_kronmatmul(const Matrix<double>&, const FactorChain<double>&,
                                           OpCounters*, const std::type_identity_t<StepObserver<double>>&);
template Matrix<float> ftmmt_kronmatmul(const Matrix<float>&, const FactorChain<float>&,
                                        OpCounters*, const std::type_identity_t<StepObserver<float>>&);
template Matrix<double> ftmmt_kronmatmul(const Matrix<double>&, const FactorChain<double>&,
                                         OpCounters*, const std::type_identity_t<StepObserver<double>>&);
template Matrix<float> ftmmt_contract(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> ftmmt_contract(const Matrix<double>&, const Matrix<double>&);

}  // namespace kron
