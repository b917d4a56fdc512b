#pragma once

#include "kron/core.hpp"

namespace kron {

/// Shuffle algorithm: per factor (last to first) reshape to (M·K/P × P),
/// matmul with the factor, then a separate transpose pass of the last two
/// dimensions of the (M × K/P × Q) result.
template <typename T>
Matrix<T> shuffle_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                             OpCounters* counters = nullptr,
                             const std::type_identity_t<StepObserver<T>>& observer = {});

/// Fused tensor-matrix multiply transpose: contracts the last dimension of
/// the (M × K/P × P) view with the factor and writes the (M × Q × K/P)
/// transposed layout directly.
template <typename T>
Matrix<T> ftmmt_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                           OpCounters* counters = nullptr,
                           const std::type_identity_t<StepObserver<T>>& observer = {});

/// One contraction without the transpose: (M × K/P × P)·F as an
/// M × ((K/P)·Q) matrix in slice-major (s, q) order.
template <typename T>
Matrix<T> ftmmt_contract(const Matrix<T>& y_in, const Matrix<T>& f);

}  // namespace kron
