#include "doctest.h"
#include "kron/core.hpp"
#include "support.hpp"

using namespace kron;
using kron::testing::random_chain;
using kron::testing::repeat;

TEST_CASE("matrix shape invariants") {
  CHECK_THROWS_AS(Matrix<double>(0, 3), DimensionError);
  CHECK_THROWS_AS(Matrix<double>(2, 2, {1, 2, 3}), DimensionError);
  Matrix<double> m(2, 3);
  CHECK(m.size() == 6);
  CHECK(m.dtype() == DType::F64);
  CHECK(Matrix<float>::dtype() == DType::F32);
}

TEST_CASE("matmul") {
  const Matrix<double> a(2, 2, {1, 2, 3, 4});
  CHECK(matmul(a, Matrix<double>::identity(2)) == a);
  CHECK(matmul(Matrix<double>(1, 2, {1, 2}), Matrix<double>(2, 1, {3, 4})) ==
        Matrix<double>(1, 1, {11}));
  CHECK_THROWS_AS(matmul(a, Matrix<double>(3, 1)), DimensionError);

  std::mt19937_64 rng(7);
  auto x = random_integer_matrix<double>(7, 5, rng);
  auto y = random_integer_matrix<double>(5, 3, rng);
  CHECK(matmul(x, y) == kron::testing::triple_loop(x, y));
}

TEST_CASE("kron_product block layout") {
  FactorChain<double> ids({Matrix<double>::identity(2), Matrix<double>::identity(2)});
  CHECK(kron_product(ids) == Matrix<double>::identity(4));

  const Matrix<double> f1(2, 2, {1, 2, 3, 4});
  const Matrix<double> f2(2, 2, {0, 1, 1, 0});
  const auto g = kron_product(FactorChain<double>({f1, f2}));
  REQUIRE(g.rows() == 4);
  REQUIRE(g.cols() == 4);
  // Block (a, b) is f1(a, b) * f2.
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(g(a * 2 + i, b * 2 + j) == f1(a, b) * f2(i, j));
  CHECK(g(0, 0) == 0);
  CHECK(g(0, 1) == 1);
  CHECK(g(1, 0) == 1);
  CHECK(g(3, 2) == 4);
}

TEST_CASE("kron_product is associative") {
  std::mt19937_64 rng(11);
  auto c = random_chain(repeat(2, 2, 3), rng);
  const auto left = kron_product(FactorChain<double>({kron_product(FactorChain<double>({c[0], c[1]})), c[2]}));
  const auto right = kron_product(FactorChain<double>({c[0], kron_product(FactorChain<double>({c[1], c[2]}))}));
  CHECK(left == right);
  CHECK(left == kron_product(c));
}

TEST_CASE("kron_product of identities of mixed sizes is identity") {
  for (auto sizes : std::vector<std::vector<std::size_t>>{{2, 3}, {1, 4, 2}, {3, 3, 2, 1}}) {
    std::vector<Matrix<double>> fs;
    std::size_t n = 1;
    for (auto s : sizes) {
      fs.push_back(Matrix<double>::identity(s));
      n *= s;
    }
    CHECK(kron_product(FactorChain<double>(fs)) == Matrix<double>::identity(n));
  }
}

TEST_CASE("kron_product shape and capacity cap") {
  std::mt19937_64 rng(3);
  auto c = random_chain({{2, 3}, {5, 1}, {1, 4}}, rng);
  const auto g = kron_product(c);
  CHECK(g.rows() == 10);
  CHECK(g.cols() == 12);
  CHECK_THROWS_AS(kron_product(c, 100), CapacityError);
  // 2^13 x 2^13 is exactly the 2^26 cap; one more factor exceeds it.
  std::vector<Matrix<double>> big(14, Matrix<double>::identity(2));
  CHECK_THROWS_AS(kron_product(FactorChain<double>(big)), CapacityError);
}

TEST_CASE("naive_kronmatmul examples") {
  std::mt19937_64 rng(5);
  auto x = random_integer_matrix<double>(2, 4, rng);
  FactorChain<double> ids({Matrix<double>::identity(2), Matrix<double>::identity(2)});
  CHECK(naive_kronmatmul(x, ids) == x);

  const Matrix<double> ones(2, 1, {1, 1});
  CHECK(naive_kronmatmul(Matrix<double>(1, 4, {1, 2, 3, 4}), FactorChain<double>({ones, ones})) ==
        Matrix<double>(1, 1, {10}));

  CHECK_THROWS_AS(naive_kronmatmul(Matrix<double>(1, 5), ids), DimensionError);
}

TEST_CASE("naive_kronmatmul first-column entry expands as a slice dot product") {
  // With F1 = I the result is X·(I ⊗ F2), so Y[0][0] = x11 f2_11 + x12 f2_21.
  std::mt19937_64 rng(9);
  auto x = random_integer_matrix<double>(2, 4, rng);
  auto f2 = random_integer_matrix<double>(2, 2, rng);
  const auto y = naive_kronmatmul(x, FactorChain<double>({Matrix<double>::identity(2), f2}));
  CHECK(y(0, 0) == x(0, 0) * f2(0, 0) + x(0, 1) * f2(1, 0));
  CHECK(y(1, 3) == x(1, 2) * f2(0, 1) + x(1, 3) * f2(1, 1));
}

TEST_CASE("naive_kronmatmul scales linearly in X") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    auto c = random_chain({{2, 3}, {3, 2}}, rng);
    auto x = random_real_matrix<double>(3, 6, rng);
    auto scaled = x;
    for (auto& v : scaled.data()) v *= 0.25;
    auto y = naive_kronmatmul(x, c);
    for (auto& v : y.data()) v *= 0.25;
    CHECK(naive_kronmatmul(scaled, c) == y);
  }
}

TEST_CASE("problem widths") {
  const Problem p(3, {{2, 3}, {5, 1}, {4, 4}});
  CHECK(p.k == 40);
  CHECK(p.l == 12);
  // Factors apply last to first: widths 40 -> 40 -> 8 -> 12.
  CHECK(p.input_width(2) == 40);
  CHECK(p.output_width(2) == 40);
  CHECK(p.output_width(1) == 8);
  CHECK(p.output_width(0) == 12);
  CHECK(p.max_interm() == 40);
  CHECK(p.max_interm() >= std::max(p.k, p.l));
  // Each output element of each step costs P mul-adds.
  CHECK(p.sliced_macs() == 3u * (4 * 40 + 5 * 8 + 2 * 12));

  const Problem widen(1, {{1, 4}, {1, 4}});
  CHECK(widen.max_interm() == 16);
}
