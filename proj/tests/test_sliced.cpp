#include <set>

#include "doctest.h"
#include "kron/baselines.hpp"
#include "kron/sliced.hpp"
#include "support.hpp"

using namespace kron;
using kron::testing::random_chain;
using kron::testing::random_tile_config;
using kron::testing::repeat;

namespace {
constexpr std::size_t kHugeBudget = std::size_t{1} << 40;
}

TEST_CASE("sliced_multiply: slice-then-column output order") {
  std::mt19937_64 rng(1);
  auto x = random_integer_matrix<double>(2, 4, rng);
  auto f = random_integer_matrix<double>(2, 2, rng);
  const auto y = sliced_multiply(x, f);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(y(r, 0) == x(r, 0) * f(0, 0) + x(r, 1) * f(1, 0));  // slice 0, col 0
    CHECK(y(r, 1) == x(r, 2) * f(0, 0) + x(r, 3) * f(1, 0));  // slice 1, col 0
    CHECK(y(r, 2) == x(r, 0) * f(0, 1) + x(r, 1) * f(1, 1));  // slice 0, col 1
    CHECK(y(r, 3) == x(r, 2) * f(0, 1) + x(r, 3) * f(1, 1));  // slice 1, col 1
  }
}

TEST_CASE("sliced_multiply: hand-evaluated values") {
  const Matrix<double> x(1, 4, {1, 2, 3, 4});
  const Matrix<double> f(2, 2, {1, 10, 100, 1000});
  const Matrix<double> want(1, 4, {201, 403, 2010, 4030});
  CHECK(sliced_multiply(x, f) == want);
  // Each slice times f is a one-factor Kron-Matmul; column b of slice s
  // lands at b·(K/P) + s.
  for (std::size_t s = 0; s < 2; ++s) {
    const auto y = naive_kronmatmul(Matrix<double>(1, 2, {x(0, 2 * s), x(0, 2 * s + 1)}),
                                    FactorChain<double>({f}));
    CHECK(y(0, 0) == want(0, s));
    CHECK(y(0, 1) == want(0, 2 + s));
  }
}

TEST_CASE("sliced_multiply: identity factor permutes columns") {
  std::mt19937_64 rng(2);
  auto x = random_integer_matrix<double>(3, 12, rng);
  const auto y = sliced_multiply(x, Matrix<double>::identity(3));
  const std::size_t slices = 4;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 12; ++j) CHECK(y(r, j) == x(r, (j % slices) * 3 + j / slices));
  CHECK(sliced_multiply(x, Matrix<double>::identity(12)) == x);
}

TEST_CASE("sliced_multiply: K not divisible by P") {
  CHECK_THROWS_AS(sliced_multiply(Matrix<double>(1, 5), Matrix<double>(2, 2)), DimensionError);
}

TEST_CASE("sliced_kronmatmul matches the naive oracle") {
  std::mt19937_64 rng(3);
  const std::vector<std::vector<FactorShape>> cases = {
      repeat(2, 2, 7),
      repeat(8, 8, 3),
      repeat(3, 3, 5),
      {{52, 50}, {65, 20}},
      {{5, 5}, {5, 5}, {5, 5}, {2, 2}},
      {{5, 5}, {5, 5}, {2, 2}, {25, 25}},
      {{32, 8}, {64, 128}},
      {{2, 3}, {3, 2}, {1, 4}},
  };
  for (const auto& shapes : cases) {
    const Problem prob(3, shapes);
    auto chain = random_chain(shapes, rng);
    auto x = random_integer_matrix<double>(prob.m, prob.k, rng);
    const auto want = naive_kronmatmul(x, chain);
    CHECK(sliced_kronmatmul(x, chain) == want);
    CHECK(sliced_kronmatmul(x, chain, TilePolicy::automatic()) == want);
  }
  FactorChain<double> ids({Matrix<double>::identity(4), Matrix<double>::identity(4)});
  auto x = random_integer_matrix<double>(2, 16, rng);
  CHECK(sliced_kronmatmul(x, ids) == x);
}

TEST_CASE("sliced_kronmatmul beyond the oracle cap agrees with ftmmt") {
  std::mt19937_64 rng(4);
  for (const auto& shapes : {repeat(4, 4, 8), repeat(16, 16, 4), repeat(6, 6, 6)}) {
    auto chain = random_chain(shapes, rng);
    const Problem prob(2, shapes);
    auto x = random_integer_matrix<double>(2, prob.k, rng);
    CHECK(sliced_kronmatmul(x, chain, TilePolicy::automatic()) == ftmmt_kronmatmul(x, chain));
  }
}

TEST_CASE("MAC count closed form") {
  std::mt19937_64 rng(5);
  for (const auto& shapes : std::vector<std::vector<FactorShape>>{
           repeat(4, 4, 3), {{2, 3}, {5, 1}, {4, 4}}, {{3, 7}, {2, 2}}}) {
    const Problem prob(5, shapes);
    auto chain = random_chain(shapes, rng);
    auto x = random_integer_matrix<double>(prob.m, prob.k, rng);
    // Σ_t P_t · (output width at t), independent of Problem::sliced_macs.
    std::uint64_t want = 0;
    std::size_t width = prob.k;
    for (std::size_t f = shapes.size(); f-- > 0;) {
      width = width / shapes[f].p * shapes[f].q;
      want += prob.m * shapes[f].p * width;
    }
    OpCounters untiled, tiled;
    sliced_kronmatmul(x, chain, TilePolicy::untiled(), &untiled);
    sliced_kronmatmul(x, chain, TilePolicy::automatic(), &tiled);
    CHECK(untiled.macs == want);
    CHECK(tiled.macs == want);
    CHECK(prob.sliced_macs() == want);
  }
  // Square factors: N · M · P · K.
  const Problem sq(16, repeat(8, 8, 4));
  auto chain = random_chain(sq.shapes, rng);
  auto x = random_integer_matrix<double>(16, sq.k, rng);
  OpCounters c;
  sliced_kronmatmul(x, chain, TilePolicy::untiled(), &c);
  CHECK(c.macs == 4ull * 16 * 8 * sq.k);
}

TEST_CASE("computation-to-traffic ratio is P for square factors") {
  std::mt19937_64 rng(6);
  for (std::size_t p : {2u, 4u, 8u}) {
    const Problem prob(4, repeat(p, p, 3));
    auto chain = random_chain(prob.shapes, rng);
    auto x = random_integer_matrix<double>(prob.m, prob.k, rng);
    OpCounters untiled;
    sliced_kronmatmul(x, chain, TilePolicy::untiled(), &untiled);
    CHECK(untiled.macs == p * untiled.main_stores);

    TileConfig cfg{2, prob.k, p, p, 1, 1, 1};
    OpCounters tiled;
    sliced_kronmatmul(x, chain, TilePolicy::fixed(cfg), &tiled, {kHugeBudget, 1});
    // Each intermediate element crosses main memory once per direction.
    CHECK(tiled.macs == p * tiled.main_loads);
    CHECK(tiled.macs == p * tiled.main_stores);
  }
}

TEST_CASE("block and micro-tile placement for M=2, K=512, 8x8") {
  const SliceShape shape{2, 512, 8, 8};
  const TileConfig cfg{1, 512, 4, 2, 2, 2, 2};
  CHECK_FALSE(tile_violation(cfg, shape, kDefaultScratchBytes, sizeof(float)));
  CHECK(shape.k / shape.p == 64);
  // Block (0,0,0) covers row 0 and factor columns {0,1}: 64 slices × 2 = 128 outputs.
  std::set<std::size_t> block0;
  for (std::size_t col = 0; col < cfg.tile_q; ++col)
    for (std::size_t s = 0; s < cfg.tile_k / shape.p; ++s)
      block0.insert(tile_output_column(col, s, 0, 0, cfg, shape));
  CHECK(block0.size() == 128);
  // The micro-tile with slices {0,1}: column 1 starts at 0, column 2 at 512/8.
  CHECK(tile_output_column(0, 0, 0, 0, cfg, shape) == 0);
  CHECK(tile_output_column(0, 1, 0, 0, cfg, shape) == 1);
  CHECK(tile_output_column(1, 0, 0, 0, cfg, shape) == 64);
  CHECK(tile_output_column(1, 1, 0, 0, cfg, shape) == 65);

  std::mt19937_64 rng(7);
  auto x = random_integer_matrix<float>(2, 512, rng);
  auto f = random_integer_matrix<float>(8, 8, rng);
  CHECK(tiled_sliced_multiply(x, f, cfg) == sliced_multiply(x, f));
}

TEST_CASE("untiled limit of the tiled engine") {
  std::mt19937_64 rng(8);
  auto x = random_real_matrix<double>(3, 27, rng);
  auto f = random_real_matrix<double>(3, 5, rng);
  CHECK(tiled_sliced_multiply(x, f, TileConfig{3, 27, 3, 5, 1, 1, 1}, nullptr,
                              {kHugeBudget, 1}) == sliced_multiply(x, f));
}

TEST_CASE("tiled engine is bit-identical to sliced_multiply for random valid configs") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  std::uniform_int_distribution<std::size_t> slices(1, 24);
  std::uniform_int_distribution<std::size_t> rows(1, 7);
  for (int trial = 0; trial < 200; ++trial) {
    const SliceShape s{rows(rng), 0, dim(rng), dim(rng)};
    SliceShape shape = s;
    shape.k = s.p * slices(rng);
    const TileConfig cfg = random_tile_config(shape, rng);
    CAPTURE(trial);
    CAPTURE(cfg.to_string());
    REQUIRE_FALSE(tile_violation(cfg, shape, kHugeBudget, sizeof(double)));
    const bool real = trial % 2 == 1;
    auto x = real ? random_real_matrix<double>(shape.m, shape.k, rng)
                  : random_integer_matrix<double>(shape.m, shape.k, rng);
    auto f = real ? random_real_matrix<double>(shape.p, shape.q, rng)
                  : random_integer_matrix<double>(shape.p, shape.q, rng);
    OpCounters c;
    CHECK(tiled_sliced_multiply(x, f, cfg, &c, {kHugeBudget, 1}) == sliced_multiply(x, f));
    CHECK(c.macs == shape.m * shape.k * shape.q);
  }
}

TEST_CASE("threaded blocks produce the same bits and counters") {
  std::mt19937_64 rng(10);
  const Problem prob(13, repeat(4, 4, 4));
  auto chain = random_chain<float>(prob.shapes, rng);
  auto x = random_real_matrix<float>(prob.m, prob.k, rng);
  const TileConfig cfg{4, 64, 2, 2, 4, 1, 2};
  OpCounters one, many;
  auto a = sliced_kronmatmul(x, chain, TilePolicy::fixed(cfg), &one, {kDefaultScratchBytes, 1});
  auto b = sliced_kronmatmul(x, chain, TilePolicy::fixed(cfg), &many, {kDefaultScratchBytes, 3});
  CHECK(a == b);
  CHECK(one == many);
}

TEST_CASE("tile config validation") {
  const SliceShape s{4, 64, 4, 4};
  const std::size_t budget = kDefaultScratchBytes;
  CHECK_FALSE(tile_violation({2, 16, 2, 2, 2, 1, 1}, s, budget, 4));
  CHECK(tile_violation({2, 6, 2, 2, 1, 1, 1}, s, budget, 4));   // tileK not multiple of P
  CHECK(tile_violation({2, 48, 2, 2, 1, 1, 1}, s, budget, 4));  // tileK does not divide K
  CHECK(tile_violation({2, 16, 3, 2, 1, 1, 1}, s, budget, 4));  // tileP
  CHECK(tile_violation({2, 16, 2, 3, 1, 1, 1}, s, budget, 4));  // tileQ
  CHECK(tile_violation({2, 16, 2, 2, 3, 1, 1}, s, budget, 4));  // regK
  CHECK(tile_violation({2, 16, 4, 2, 1, 3, 1}, s, budget, 4));  // regP
  CHECK(tile_violation({2, 16, 2, 4, 1, 1, 3}, s, budget, 4));  // regQ
  CHECK(tile_violation({4, 64, 4, 4, 1, 1, 1}, s, 64, 4));      // budget
  auto msg = tile_violation({2, 16, 2, 2, 3, 1, 1}, s, budget, 4);
  CHECK(msg->find("regK") != std::string::npos);

  std::mt19937_64 rng(11);
  auto chain = random_chain(repeat(4, 4, 3), rng);
  auto x = random_integer_matrix<double>(4, 64, rng);
  CHECK_THROWS_AS(sliced_kronmatmul(x, chain, TilePolicy::fixed({2, 48, 2, 2, 1, 1, 1})),
                  ConfigError);
  CHECK_THROWS_AS(tiled_sliced_multiply(x, chain[0], TileConfig{2, 16, 3, 2, 1, 1, 1}),
                  ConfigError);
}

TEST_CASE("tile config text round trip") {
  const TileConfig c{1, 512, 4, 2, 2, 2, 2};
  CHECK(c.to_string() == "1,512,4,2,2,2,2");
  CHECK(TileConfig::parse(c.to_string()) == c);
  CHECK_THROWS_AS(TileConfig::parse("1,2,3"), ConfigError);
  CHECK_THROWS_AS(TileConfig::parse("1,2,3,4,5,6,7,8"), ConfigError);
  CHECK_THROWS_AS(TileConfig::parse("a,2,3,4,5,6,7"), ConfigError);
}

TEST_CASE("default tile config is valid across shapes and budgets") {
  for (const SliceShape& s : {SliceShape{1, 64, 8, 8}, SliceShape{1024, 2187, 3, 3},
                              SliceShape{16, 4096, 64, 64}, SliceShape{10, 3380, 65, 20},
                              SliceShape{5, 17, 17, 3}}) {
    for (std::size_t budget : {std::size_t{4096}, kDefaultScratchBytes}) {
      const auto c = default_tile_config(s, budget, sizeof(double));
      CHECK_FALSE(tile_violation(c, s, budget, sizeof(double)));
    }
  }
  CHECK_THROWS_AS(default_tile_config({1, 4, 2, 2}, 8, sizeof(double)), ConfigError);
}

TEST_CASE("shift caching: rotation of slices 2 and 4") {
  // tileP = 4, regK = 2: slice 2 is rotated by one position.
  CHECK(shift_store_index(8, 4, 2) == 9);
  CHECK(shift_store_index(9, 4, 2) == 10);
  CHECK(shift_store_index(10, 4, 2) == 11);
  CHECK(shift_store_index(11, 4, 2) == 8);
  // Slice 4 is rotated by 4 / regK = 2 inside its own row segment [16, 20).
  CHECK(shift_store_index(16, 4, 2) == 18);
  CHECK(shift_load_index(2, 0, 4, 2) == 9);
  CHECK(shift_load_index(4, 0, 4, 2) == 18);
  // Element 0 of slices 2 and 4 sit in different banks of a 4-bank scratch.
  CHECK(shift_load_index(2, 0, 4, 2) % 4 != shift_load_index(4, 0, 4, 2) % 4);
  for (std::size_t k = 0; k < 8; ++k) CHECK(shift_store_index(k, 4, 2) == k);  // slices 0,1
}

TEST_CASE("shift caching: store and load maps are inverse bijections") {
  for (std::size_t tile_p : {2u, 4u, 8u, 16u}) {
    for (std::size_t slices : {1u, 2u, 4u, 6u, 8u, 12u, 64u}) {
      for (std::size_t reg_k : kron::testing::divisors(slices)) {
        const std::size_t ks = slices * tile_p;
        std::vector<int> hit(ks, 0);
        for (std::size_t k = 0; k < ks; ++k) {
          const std::size_t pos = shift_store_index(k, tile_p, reg_k);
          REQUIRE(pos < ks);
          ++hit[pos];
          CHECK(shift_load_index(k / tile_p, k % tile_p, tile_p, reg_k) == pos);
        }
        CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
      }
    }
  }
}
