#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <type_traits>
#include <vector>

#include "kron/matrix.hpp"

namespace kron {

struct FactorShape {
  std::size_t p = 0;  // rows
  std::size_t q = 0;  // cols

  friend bool operator==(const FactorShape&, const FactorShape&) = default;
};

/// Ordered factors F^1..F^N of a Kronecker product F^1 ⊗ ... ⊗ F^N.
template <typename T>
class FactorChain {
 public:
  explicit FactorChain(std::vector<Matrix<T>> factors);

  std::size_t n() const noexcept { return factors_.size(); }
  const Matrix<T>& operator[](std::size_t i) const noexcept { return factors_[i]; }
  const std::vector<Matrix<T>>& factors() const noexcept { return factors_; }
  std::vector<FactorShape> shapes() const;

  template <typename U>
  FactorChain<U> cast() const {
    std::vector<Matrix<U>> out;
    out.reserve(factors_.size());
    for (const auto& f : factors_) out.push_back(f.template cast<U>());
    return FactorChain<U>(std::move(out));
  }

 private:
  std::vector<Matrix<T>> factors_;
};

/// Shape of a Kron-Matmul: X (m × k) times F^1 ⊗ ... ⊗ F^N giving m × l.
struct Problem {
  std::size_t m = 0;
  std::vector<FactorShape> shapes;
  std::size_t k = 0;  // Π p_i
  std::size_t l = 0;  // Π q_i

  Problem(std::size_t m, std::vector<FactorShape> shapes);

  std::size_t n() const noexcept { return shapes.size(); }

  /// Column count of the input consumed when factor `f` (0-based) is applied.
  /// Factors are applied last to first, so the input to factor f has width
  /// (Π_{i<=f} p_i)(Π_{i>f} q_i).
  std::size_t input_width(std::size_t f) const;
  std::size_t output_width(std::size_t f) const;

  /// Widest intermediate over the whole factor sweep (including X and Y).
  std::size_t max_interm() const;

  /// Exact multiply-accumulate count of a transpose-free sweep.
  std::uint64_t sliced_macs() const;

  bool uniform() const;
};

/// Work and traffic tallies kept by every algorithm. Main counts cover
/// intermediate matrices in the main buffers; factor reads are not counted.
struct OpCounters {
  std::uint64_t macs = 0;
  std::uint64_t scratch_loads = 0;
  std::uint64_t scratch_stores = 0;
  std::uint64_t main_loads = 0;
  std::uint64_t main_stores = 0;

  std::uint64_t main_accesses() const noexcept { return main_loads + main_stores; }
  std::uint64_t scratch_accesses() const noexcept { return scratch_loads + scratch_stores; }

  OpCounters& operator+=(const OpCounters& o) noexcept {
    macs += o.macs;
    scratch_loads += o.scratch_loads;
    scratch_stores += o.scratch_stores;
    main_loads += o.main_loads;
    main_stores += o.main_stores;
    return *this;
  }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

/// Called after each factor is applied with the 0-based factor index and the
/// intermediate it produced.
template <typename T>
using StepObserver = std::function<void(std::size_t factor, const Matrix<T>& intermediate)>;

/// Largest Kronecker matrix (in elements) the naive oracle will materialise.
inline constexpr std::size_t kNaiveElementCap = std::size_t{1} << 26;

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, OpCounters* counters = nullptr);

/// Materialises F^1 ⊗ ... ⊗ F^N. Throws CapacityError beyond `element_cap`.
template <typename T>
Matrix<T> kron_product(const FactorChain<T>& chain, std::size_t element_cap = kNaiveElementCap);

/// matmul(x, kron_product(chain)). The ground-truth oracle.
template <typename T>
Matrix<T> naive_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                           OpCounters* counters = nullptr);

/// Throws DimensionError unless x.cols() == Π p_i.
template <typename T>
void check_input(const Matrix<T>& x, const FactorChain<T>& chain);

}  // namespace kron
