#pragma once

#include <random>
#include <vector>

#include "kron/core.hpp"

namespace kron::testing {

template <typename T = double>
FactorChain<T> random_chain(const std::vector<FactorShape>& shapes, std::mt19937_64& rng,
                            int magnitude = 8) {
  std::vector<Matrix<T>> fs;
  for (const auto& s : shapes) fs.push_back(random_integer_matrix<T>(s.p, s.q, rng, magnitude));
  return FactorChain<T>(std::move(fs));
}

inline std::vector<FactorShape> repeat(std::size_t p, std::size_t q, std::size_t n) {
  return std::vector<FactorShape>(n, FactorShape{p, q});
}

/// Plain i-j-k triple loop, kept apart from the library's matmul.
template <typename T>
Matrix<T> triple_loop(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc{0};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

}  // namespace kron::testing

#include "kron/sliced.hpp"

namespace kron::testing {

inline std::vector<std::size_t> divisors(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

template <typename Rng>
std::size_t pick(const std::vector<std::size_t>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

/// A uniformly drawn configuration satisfying every TileConfig invariant
/// (checked independently of tile_violation).
template <typename Rng>
TileConfig random_tile_config(const SliceShape& s, Rng& rng) {
  TileConfig c;
  c.tile_k = s.p * pick(divisors(s.k / s.p), rng);
  c.tile_p = pick(divisors(s.p), rng);
  c.tile_q = pick(divisors(s.q), rng);
  c.reg_k = pick(divisors(c.tile_k / s.p), rng);
  c.reg_p = pick(divisors(c.tile_p), rng);
  c.reg_q = pick(divisors(c.tile_q), rng);
  std::uniform_int_distribution<std::size_t> tm(1, s.m);
  c.tile_m = tm(rng);
  return c;
}

}  // namespace kron::testing
