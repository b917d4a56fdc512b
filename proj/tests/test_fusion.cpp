#include <algorithm>
#include <set>

#include "doctest.h"
#include "kron/fusion.hpp"
#include "support.hpp"

using namespace kron;
using kron::testing::random_chain;
using kron::testing::repeat;

namespace {

// Three-part form of the store index, valid when P == Q.
std::size_t three_part_index(std::size_t c, std::size_t blk, std::size_t k, std::size_t p,
                             std::size_t tile_k, std::size_t fused) {
  std::size_t pf = 1;
  for (std::size_t i = 0; i < fused; ++i) pf *= p;
  const std::size_t xg = k / p, xs = tile_k / p, xg_fuse = k / pf, xs_fuse = tile_k / pf;
  return (c / xs) * xg + ((c % xs) / xs_fuse) * xg_fuse + blk * xs_fuse + c % xs_fuse;
}

constexpr std::size_t kHugeBudget = std::size_t{1} << 40;

}  // namespace

TEST_CASE("fused_store_index: column 41 of block 0 lands at 81") {
  CHECK(fused_store_index(41, 0, 256, 4, 128, 2) == 81);
  static_assert(fused_store_index(41, 0, 256, 4, 128, 2) == 64 + 16 + 1);
}

TEST_CASE("fused_store_index: single tile without fusion is the identity") {
  for (std::size_t c = 0; c < 64; ++c) CHECK(fused_store_index(c, 0, 64, 4, 64, 1) == c);
}

TEST_CASE("fused_store_index agrees with the three-part form for square factors") {
  for (std::size_t p : {2, 3, 4}) {
    std::size_t tile_k = p * p * p;
    std::size_t k = tile_k * p;
    for (std::size_t f = 1; f <= 3; ++f)
      for (std::size_t blk = 0; blk < k / tile_k; ++blk)
        for (std::size_t c = 0; c < tile_k; ++c)
          CHECK(fused_store_index(c, blk, k, p, tile_k, f) ==
                three_part_index(c, blk, k, p, tile_k, f));
  }
}

TEST_CASE("fused_store_index: blocks tile the global range exactly once") {
  for (std::size_t f = 1; f <= 3; ++f) {
    std::set<std::size_t> seen;
    for (std::size_t blk = 0; blk < 2; ++blk)
      for (std::size_t c = 0; c < 128; ++c) {
        const auto g = fused_store_index(c, blk, 256, 4, 128, f);
        CHECK(g < 256);
        CHECK(seen.insert(g).second);
      }
    CHECK(seen.size() == 256);
  }
}

TEST_CASE("fused_store_index: block 0 lands as runs of tileK / P^fused") {
  auto runs = [](std::size_t fused) {
    std::vector<std::size_t> img;
    for (std::size_t c = 0; c < 128; ++c) img.push_back(fused_store_index(c, 0, 256, 4, 128, fused));
    std::vector<std::size_t> lengths{1};
    for (std::size_t i = 1; i < img.size(); ++i) {
      if (img[i] == img[i - 1] + 1) ++lengths.back();
      else lengths.push_back(1);
    }
    return lengths;
  };
  CHECK(runs(1) == std::vector<std::size_t>(4, 32));
  CHECK(runs(2) == std::vector<std::size_t>(16, 8));
  // Block 1 fills the gaps between block 0's runs.
  CHECK(fused_store_index(0, 1, 256, 4, 128, 1) == 32);
  CHECK(fused_store_index(0, 1, 256, 4, 128, 2) == 8);
}

TEST_CASE("fused pass scratch matches two unfused sliced multiplies") {
  std::mt19937_64 rng(11);
  auto x = random_integer_matrix<double>(1, 256, rng);
  auto chain = random_chain<double>(repeat(4, 4, 2), rng);
  const auto two_pass = sliced_multiply(sliced_multiply(x, chain[1]), chain[0]);
  const auto one_pass = sliced_multiply(x, chain[1]);
  const auto cfg = FuseConfig::make(2, {1, 128, 4, 4, 1, 1, 1}, 4, 4);

  std::size_t checked = 0;
  Matrix<double> y(1, 256);
  const Matrix<double>* group[] = {&chain[0], &chain[1]};
  fused_pass_into<double>(
      x.data(), y.data(), 1, 256, group, cfg, nullptr, {},
      [&](std::size_t row, std::size_t blk, std::size_t depth, std::span<const double> s) {
        CHECK(row == 0);
        REQUIRE(s.size() == 128);
        const auto& ref = depth == 1 ? one_pass : two_pass;
        for (std::size_t c = 0; c < s.size(); ++c)
          CHECK(s[c] == ref(0, fused_store_index(c, blk, 256, 4, 128, depth)));
        ++checked;
      });
  CHECK(checked == 4);
  CHECK(y == two_pass);
}

TEST_CASE("fused_kronmatmul: four 4x4 factors, tileK 128, fused 2") {
  std::mt19937_64 rng(12);
  auto x = random_integer_matrix<double>(1, 256, rng);
  auto chain = random_chain<double>(repeat(4, 4, 4), rng);
  OpCounters c;
  const auto y =
      fused_kronmatmul(x, chain, FuseConfig::make(2, {1, 128, 4, 4, 1, 1, 1}, 4, 4), &c);
  CHECK(y == naive_kronmatmul(x, chain));
  // Two passes, each reading and writing the 256-wide row once.
  CHECK(c.main_loads == 2 * 256);
  CHECK(c.main_stores == 2 * 256);
}

TEST_CASE("fused = 1 is the unfused tiled path") {
  std::mt19937_64 rng(13);
  auto x = random_real_matrix<double>(5, 256, rng);
  auto chain = FactorChain<double>({random_real_matrix<double>(4, 4, rng),
                                    random_real_matrix<double>(4, 4, rng),
                                    random_real_matrix<double>(4, 4, rng),
                                    random_real_matrix<double>(4, 4, rng)});
  const TileConfig base{2, 64, 2, 2, 4, 1, 2};
  OpCounters fused_c, tiled_c;
  const auto a = fused_kronmatmul(x, chain, FuseConfig::make(1, base, 4, 4), &fused_c);
  const auto b = sliced_kronmatmul(x, chain, TilePolicy::fixed(base), &tiled_c);
  CHECK(a == b);
  CHECK(fused_c == tiled_c);
}

TEST_CASE("fusion reduces main traffic for 8^5") {
  std::mt19937_64 rng(14);
  auto x = random_integer_matrix<double>(16, 32768, rng, 2);
  auto chain = random_chain<double>(repeat(8, 8, 5), rng, 2);
  const TileConfig base{1, 512, 8, 8, 4, 2, 4};
  std::vector<Matrix<double>> outs;
  std::vector<std::uint64_t> traffic;
  for (std::size_t f = 1; f <= 3; ++f) {
    OpCounters c;
    outs.push_back(fused_kronmatmul(x, chain, FuseConfig::make(f, base, 8, 8), &c));
    traffic.push_back(c.main_accesses());
    // ceil(5 / f) passes over a 16 x 32768 intermediate.
    CHECK(c.main_accesses() == (5 + f - 1) / f * 2 * 16 * 32768);
    CHECK(c.macs == 5ull * 16 * 8 * 32768);
  }
  CHECK(outs[0] == outs[1]);
  CHECK(outs[1] == outs[2]);
  CHECK(traffic[0] > traffic[1]);
  CHECK(traffic[1] > traffic[2]);
}

TEST_CASE("FuseConfig bounds") {
  CHECK(max_fused(4, 128) == 3);
  CHECK(max_fused(4, 64) == 3);
  CHECK(max_fused(4, 63) == 2);
  CHECK(max_fused(2, 1) == 0);
  CHECK(max_fused(8, 512) == 3);
  CHECK(max_fused(3, 243) == 5);

  const TileConfig ok{1, 128, 4, 4, 1, 1, 1};
  CHECK(FuseConfig::make(3, ok, 4, 4).fused() == 3);
  CHECK_THROWS_AS(FuseConfig::make(4, ok, 4, 4), ConfigError);
  CHECK_THROWS_AS(FuseConfig::make(0, ok, 4, 4), ConfigError);
  CHECK_THROWS_AS(FuseConfig::make(2, {1, 128, 2, 4, 1, 1, 1}, 4, 4), ConfigError);
  CHECK_THROWS_AS(FuseConfig::make(2, {1, 128, 4, 2, 1, 1, 1}, 4, 4), ConfigError);
  CHECK_NOTHROW(FuseConfig::make(1, {1, 128, 2, 2, 1, 1, 1}, 4, 4));
  // 24 is not a multiple of 4^2 even though floor(log_4 24) = 2.
  CHECK_THROWS_AS(FuseConfig::make(2, {1, 24, 4, 4, 1, 1, 1}, 4, 4), ConfigError);

  const TileConfig wide{1, 4096, 64, 64, 1, 1, 1};
  CHECK_THROWS_AS(FuseConfig::make(2, wide, 64, 64), ConfigError);
  CHECK_NOTHROW(FuseConfig::make(2, wide, 64, 64, FuseLimits{64, 64}));
}

TEST_CASE("fused_kronmatmul rejects configs that do not fit the problem") {
  std::mt19937_64 rng(15);
  auto x = random_integer_matrix<double>(2, 64, rng);
  auto chain = random_chain<double>(repeat(4, 4, 3), rng);
  const auto cfg = FuseConfig::make(2, {1, 128, 4, 4, 1, 1, 1}, 4, 4);
  CHECK_THROWS_AS(fused_kronmatmul(x, chain, cfg), ConfigError);  // tileK > K
  ExecOptions tight;
  tight.scratch_bytes = 1024;
  const auto cfg2 = FuseConfig::make(2, {1, 64, 4, 4, 1, 1, 1}, 4, 4);
  CHECK_THROWS_AS(fused_kronmatmul(x, chain, cfg2, nullptr, tight), ConfigError);
}

TEST_CASE("fused_kronmatmul matches naive over uniform and rectangular chains") {
  std::mt19937_64 rng(16);
  const std::vector<FactorShape> shapes{{2, 2}, {3, 3}, {2, 3}, {3, 2}, {4, 4}};
  for (auto s : shapes) {
    for (std::size_t n = 1; n <= 5; ++n) {
      std::size_t k = 1;
      for (std::size_t i = 0; i < n; ++i) k *= s.p;
      for (std::size_t m : {1, 3, 16}) {
        auto x = random_integer_matrix<double>(m, k, rng);
        auto chain = random_chain<double>(repeat(s.p, s.q, n), rng);
        const auto want = naive_kronmatmul(x, chain);
        // Every tileK = P^t with a fusion depth up to t; tileK must divide
        // each intermediate width, which P^t does while widths stay multiples.
        for (std::size_t t = 1, tk = s.p; t <= n; ++t, tk *= s.p) {
          for (std::size_t f = 1; f <= t; ++f) {
            const TileConfig base{std::min<std::size_t>(m, 2), tk, s.p, s.q, 1, 1, 1};
            const auto cfg = FuseConfig::make(f, base, s.p, s.q);
            // Every pass needs tileK | width at its start.
            bool fits = true;
            std::size_t w = k;
            for (std::size_t done = 0; done < n;) {
              if (w % tk != 0) fits = false;
              const std::size_t g = std::min(f, n - done);
              for (std::size_t i = 0; i < g; ++i) w = w / s.p * s.q;
              done += g;
            }
            if (!fits) {
              CHECK_THROWS_AS(fused_kronmatmul(x, chain, cfg, nullptr, {kHugeBudget, 1}),
                              ConfigError);
              continue;
            }
            CAPTURE(s.p);
            CAPTURE(s.q);
            CAPTURE(n);
            CAPTURE(t);
            CAPTURE(f);
            CHECK(fused_kronmatmul(x, chain, cfg, nullptr, {kHugeBudget, 1}) == want);
          }
        }
      }
    }
  }
}

TEST_CASE("mixed chains fuse only matching runs") {
  std::mt19937_64 rng(17);
  // 5x5 at both ends, three 2x2 in the middle.
  auto chain = random_chain<double>({{5, 5}, {2, 2}, {2, 2}, {2, 2}, {5, 5}}, rng);
  auto x = random_integer_matrix<double>(3, 200, rng);
  const auto cfg = FuseConfig::make(2, {1, 8, 2, 2, 1, 1, 1}, 2, 2);
  OpCounters c;
  CHECK(fused_kronmatmul(x, chain, cfg, &c) == naive_kronmatmul(x, chain));
  // Passes: 5x5, fused (2x2, 2x2), 2x2, 5x5.
  CHECK(c.main_stores == 4 * 3 * 200);
}

TEST_CASE("fused_kronmatmul is deterministic across threads") {
  std::mt19937_64 rng(18);
  auto x = random_real_matrix<double>(7, 4096, rng);
  auto chain = FactorChain<double>({random_real_matrix<double>(8, 8, rng),
                                    random_real_matrix<double>(8, 8, rng),
                                    random_real_matrix<double>(8, 8, rng),
                                    random_real_matrix<double>(8, 8, rng)});
  const auto cfg = FuseConfig::make(2, {2, 512, 8, 8, 1, 1, 1}, 8, 8);
  OpCounters c1, c3;
  const auto a = fused_kronmatmul(x, chain, cfg, &c1, {kHugeBudget, 1});
  const auto b = fused_kronmatmul(x, chain, cfg, &c3, {kHugeBudget, 3});
  CHECK(a == b);
  CHECK(c1 == c3);
  CHECK(a == sliced_kronmatmul(x, chain));
}

TEST_CASE("fused_sweep_violation predicts whether the sweep accepts a config") {
  std::mt19937_64 rng(77);
  const std::vector<std::vector<FactorShape>> chains = {
      repeat(2, 3, 3), repeat(3, 2, 4), repeat(4, 4, 3), {{5, 5}, {5, 5}, {2, 2}},
      {{2, 2}, {4, 4}, {4, 4}}};
  std::size_t accepted = 0, refused = 0;
  for (const auto& shapes : chains) {
    const Problem problem(2, shapes);
    auto x = random_integer_matrix<double>(2, problem.k, rng);
    auto chain = random_chain<double>(shapes, rng);
    const auto& s = shapes.back();
    for (std::size_t tile_k = s.p; tile_k <= problem.k; tile_k += s.p) {
      if (problem.k % tile_k) continue;
      for (std::size_t f = 1; f <= max_fused(s.p, tile_k); ++f) {
        std::optional<FuseConfig> cfg;
        try {
          cfg = FuseConfig::make(f, {1, tile_k, s.p, s.q, 1, 1, 1}, s.p, s.q);
        } catch (const ConfigError&) {
          continue;
        }
        const auto v = fused_sweep_violation(problem, *cfg, kDefaultScratchBytes, sizeof(double));
        std::optional<Matrix<double>> y;
        try {
          y = fused_kronmatmul(x, chain, *cfg);
        } catch (const ConfigError&) {
        }
        const bool threw = !y;
        if (y) CHECK(*y == naive_kronmatmul(x, chain));
        CHECK(threw == v.has_value());
        (threw ? refused : accepted) += 1;
      }
    }
  }
  CHECK(accepted > 0);
  CHECK(refused > 0);
}
