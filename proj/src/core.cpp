#include "kron/core.hpp"

#include <algorithm>
#include <string>

namespace kron {

template <typename T>
FactorChain<T>::FactorChain(std::vector<Matrix<T>> factors) : factors_(std::move(factors)) {
  if (factors_.empty()) throw DimensionError("factor chain must hold at least one factor");
}

template <typename T>
std::vector<FactorShape> FactorChain<T>::shapes() const {
  std::vector<FactorShape> out;
  out.reserve(factors_.size());
  for (const auto& f : factors_) out.push_back({f.rows(), f.cols()});
  return out;
}

Problem::Problem(std::size_t m_, std::vector<FactorShape> shapes_)
    : m(m_), shapes(std::move(shapes_)), k(1), l(1) {
  if (m == 0) throw DimensionError("problem must have at least one row");
  if (shapes.empty()) throw DimensionError("problem must have at least one factor");
  for (const auto& s : shapes) {
    if (s.p == 0 || s.q == 0) throw DimensionError("factor shapes must be at least 1x1");
    k *= s.p;
    l *= s.q;
  }
}

std::size_t Problem::input_width(std::size_t f) const {
  std::size_t w = 1;
  for (std::size_t i = 0; i < shapes.size(); ++i) w *= i <= f ? shapes[i].p : shapes[i].q;
  return w;
}

std::size_t Problem::output_width(std::size_t f) const {
  return input_width(f) / shapes[f].p * shapes[f].q;
}

std::size_t Problem::max_interm() const {
  std::size_t best = k;
  for (std::size_t f = 0; f < shapes.size(); ++f) best = std::max(best, output_width(f));
  return best;
}

std::uint64_t Problem::sliced_macs() const {
  std::uint64_t total = 0;
  for (std::size_t f = 0; f < shapes.size(); ++f) {
    total += static_cast<std::uint64_t>(m) * shapes[f].p * output_width(f);
  }
  return total;
}

bool Problem::uniform() const {
  return std::all_of(shapes.begin(), shapes.end(),
                     [&](const FactorShape& s) { return s == shapes.front(); });
}

template <typename T>
void check_input(const Matrix<T>& x, const FactorChain<T>& chain) {
  std::size_t k = 1;
  for (const auto& f : chain.factors()) k *= f.rows();
  if (x.cols() != k) {
    throw DimensionError("input has " + std::to_string(x.cols()) +
                         " columns but the factor rows multiply to " + std::to_string(k));
  }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, OpCounters* counters) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix<T> c(a.rows(), b.cols());
  // i-k-j order keeps the inner loop on contiguous rows of b and c.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  if (counters) {
    const std::uint64_t macs = static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
    counters->macs += macs;
    counters->main_loads += 2 * macs;
    counters->main_stores += static_cast<std::uint64_t>(a.rows()) * b.cols();
  }
  return c;
}

template <typename T>
Matrix<T> kron_product(const FactorChain<T>& chain, std::size_t element_cap) {
  std::size_t rows = 1;
  std::size_t cols = 1;
  for (const auto& f : chain.factors()) {
    rows *= f.rows();
    cols *= f.cols();
    if (rows * cols > element_cap) {
      throw CapacityError("Kronecker product exceeds the oracle cap of " +
                          std::to_string(element_cap) + " elements");
    }
  }
  Matrix<T> acc = chain[0];
  for (std::size_t i = 1; i < chain.n(); ++i) {
    const Matrix<T>& b = chain[i];
    Matrix<T> next(acc.rows() * b.rows(), acc.cols() * b.cols());
    for (std::size_t ar = 0; ar < acc.rows(); ++ar)
      for (std::size_t ac = 0; ac < acc.cols(); ++ac) {
        const T scale = acc(ar, ac);
        for (std::size_t br = 0; br < b.rows(); ++br)
          for (std::size_t bc = 0; bc < b.cols(); ++bc)
            next(ar * b.rows() + br, ac * b.cols() + bc) = scale * b(br, bc);
      }
    acc = std::move(next);
  }
  return acc;
}

template <typename T>
Matrix<T> naive_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                           OpCounters* counters) {
  check_input(x, chain);
  return matmul(x, kron_product(chain), counters);
}

template class FactorChain<float>;
template class FactorChain<double>;
template void check_input(const Matrix<float>&, const FactorChain<float>&);
template void check_input(const Matrix<double>&, const FactorChain<double>&);
template Matrix<float> matmul(const Matrix<float>&, const Matrix<float>&, OpCounters*);
template Matrix<double> matmul(const Matrix<double>&, const Matrix<double>&, OpCounters*);
template Matrix<float> kron_product(const FactorChain<float>&, std::size_t);
template Matrix<double> kron_product(const FactorChain<double>&, std::size_t);
template Matrix<float> naive_kronmatmul(const Matrix<float>&, const FactorChain<float>&,
                                        OpCounters*);
template Matrix<double> naive_kronmatmul(const Matrix<double>&, const FactorChain<double>&,
                                         OpCounters*);

}  // namespace kron
