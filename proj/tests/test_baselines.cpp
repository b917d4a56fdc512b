#include "doctest.h"
#include "kron/baselines.hpp"
#include "kron/sliced.hpp"
#include "support.hpp"

using namespace kron;
using kron::testing::random_chain;
using kron::testing::repeat;

TEST_CASE("shuffle first iteration matches the transposed-reshape layout") {
  std::mt19937_64 rng(21);
  auto x = random_integer_matrix<double>(2, 4, rng);
  auto chain = random_chain(repeat(2, 2, 2), rng);
  const auto& f2 = chain[1];
  std::optional<Matrix<double>> first;
  shuffle_kronmatmul(x, chain, nullptr, [&](std::size_t f, const Matrix<double>& y) {
    if (f == 1) first = y;
  });
  REQUIRE(first);
  for (std::size_t r = 0; r < 2; ++r) {
    // [slice 0 · col 0, slice 1 · col 0, slice 0 · col 1, slice 1 · col 1]
    CHECK((*first)(r, 0) == x(r, 0) * f2(0, 0) + x(r, 1) * f2(1, 0));
    CHECK((*first)(r, 1) == x(r, 2) * f2(0, 0) + x(r, 3) * f2(1, 0));
    CHECK((*first)(r, 2) == x(r, 0) * f2(0, 1) + x(r, 1) * f2(1, 1));
    CHECK((*first)(r, 3) == x(r, 2) * f2(0, 1) + x(r, 3) * f2(1, 1));
  }
}

TEST_CASE("identity chains leave X unchanged") {
  std::mt19937_64 rng(1);
  auto x = random_integer_matrix<double>(3, 12, rng);
  FactorChain<double> ids({Matrix<double>::identity(3), Matrix<double>::identity(2),
                           Matrix<double>::identity(2)});
  CHECK(shuffle_kronmatmul(x, ids) == x);
  CHECK(ftmmt_kronmatmul(x, ids) == x);
}

TEST_CASE("shuffle and ftmmt match the naive oracle on odd rectangular factors") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  std::uniform_int_distribution<std::size_t> count(1, 3);
  std::uniform_int_distribution<std::size_t> rows(1, 5);
  int checked = 0;
  while (checked < 20) {
    std::vector<FactorShape> shapes;
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) shapes.push_back({dim(rng), dim(rng)});
    const Problem prob(rows(rng), shapes);
    if (prob.k * prob.l > 40000) continue;
    auto chain = random_chain(shapes, rng);
    auto x = random_integer_matrix<double>(prob.m, prob.k, rng);
    const auto want = naive_kronmatmul(x, chain);
    CAPTURE(checked);
    CHECK(shuffle_kronmatmul(x, chain) == want);
    CHECK(ftmmt_kronmatmul(x, chain) == want);
    ++checked;
  }
}

TEST_CASE("ftmmt on three 2x2 factors") {
  std::mt19937_64 rng(3);
  auto chain = random_chain(repeat(2, 2, 3), rng);
  auto x = random_integer_matrix<double>(4, 8, rng);
  CHECK(ftmmt_kronmatmul(x, chain) == naive_kronmatmul(x, chain));
}

TEST_CASE("ftmmt contraction, transposed, is the shuffle's first intermediate") {
  std::mt19937_64 rng(4);
  auto chain = random_chain(repeat(2, 2, 3), rng);
  auto x = random_integer_matrix<double>(1, 8, rng);
  const auto tensor = ftmmt_contract(x, chain[2]);  // 1 × 4 × 2 in (s, q) order
  REQUIRE(tensor.cols() == 8);
  std::optional<Matrix<double>> first;
  shuffle_kronmatmul(x, chain, nullptr, [&](std::size_t f, const Matrix<double>& y) {
    if (f == 2) first = y;
  });
  REQUIRE(first);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t q = 0; q < 2; ++q) CHECK(tensor(0, s * 2 + q) == (*first)(0, q * 4 + s));
}

TEST_CASE("baselines name the failing factor on a shape mismatch") {
  Matrix<double> x(1, 6);
  CHECK_THROWS_AS(shuffle_kronmatmul(x, FactorChain<double>({Matrix<double>(2, 2),
                                                             Matrix<double>(2, 2)})),
                  DimensionError);
}

TEST_CASE("shuffle performs more main-memory traffic than the sliced sweep") {
  std::mt19937_64 rng(5);
  for (auto shapes : std::vector<std::vector<FactorShape>>{
           repeat(2, 2, 2), repeat(3, 3, 3), {{2, 3}, {3, 2}}, repeat(4, 4, 4)}) {
    auto chain = random_chain(shapes, rng);
    const Problem prob(3, shapes);
    auto x = random_integer_matrix<double>(3, prob.k, rng);
    OpCounters shuffle, sliced, tiled;
    shuffle_kronmatmul(x, chain, &shuffle);
    sliced_kronmatmul(x, chain, TilePolicy::untiled(), &sliced);
    sliced_kronmatmul(x, chain, TilePolicy::automatic(), &tiled);
    CHECK(shuffle.macs == sliced.macs);
    CHECK(shuffle.main_accesses() > sliced.main_accesses());
    CHECK(shuffle.main_accesses() > tiled.main_accesses());
  }
}
