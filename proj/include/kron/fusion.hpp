#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <span>

#include "kron/sliced.hpp"

namespace kron {

/// Largest f with p^f <= tile_k, computed in integers.
std::size_t max_fused(std::size_t p, std::size_t tile_k) noexcept;

struct FuseLimits {
  // Fusion beyond these factor extents is refused unless raised.
  std::size_t max_p = 32;
  std::size_t max_q = 32;
};

/// Number of consecutive P×Q factors applied per pass while the block stays
/// in scratch, plus the tile geometry of each pass.
class FuseConfig {
 public:
  /// Throws ConfigError when fused is 0, exceeds max_fused(p, tileK), does
  /// not divide tileK as a power of p, or (for fused > 1) when tileP != p,
  /// tileQ != q or the factor exceeds `limits`.
  static FuseConfig make(std::size_t fused, const TileConfig& base, std::size_t p, std::size_t q,
                         const FuseLimits& limits = {});

  std::size_t fused() const noexcept { return fused_; }
  const TileConfig& base() const noexcept { return base_; }
  std::size_t p() const noexcept { return p_; }
  std::size_t q() const noexcept { return q_; }

  /// Scalars of scratch one block uses for a group of `depth` factors.
  std::size_t scratch_scalars(std::size_t depth) const noexcept;

 private:
  FuseConfig(std::size_t fused, const TileConfig& base, std::size_t p, std::size_t q)
      : fused_(fused), base_(base), p_(p), q_(q) {}

  std::size_t fused_;
  TileConfig base_;
  std::size_t p_;
  std::size_t q_;
};

/// Global column of scratch column `c` after `fused` in-scratch multiplies of
/// block `block_idx`, where the block covered input columns
/// [block_idx·tileK, (block_idx+1)·tileK) of a K-wide row.
///
/// With u = tileK / P^fused the scratch row is made of runs of u contiguous
/// elements; run r lands at r·(K / P^fused) + block_idx·u. For P == Q this is
/// (c div tileK/P)·K/P + ((c mod tileK/P) div u)·K/P^fused + block_idx·u + c mod u.
constexpr std::size_t fused_store_index(std::size_t c, std::size_t block_idx, std::size_t k,
                                        std::size_t p, std::size_t tile_k,
                                        std::size_t fused) noexcept {
  std::size_t pf = 1;
  for (std::size_t i = 0; i < fused; ++i) pf *= p;
  const std::size_t u = tile_k / pf;
  return (c / u) * (k / pf) + block_idx * u + c % u;
}

/// First reason fused_kronmatmul would refuse `cfg` for `problem`, or
/// nullopt. Groups are formed as the sweep forms them: runs of factors
/// matching cfg's shape, taken from the end of the chain, at most `fused`
/// long; the base tile must be valid at every width where it is used.
std::optional<std::string> fused_sweep_violation(const Problem& problem, const FuseConfig& cfg,
                                                 std::size_t scratch_bytes,
                                                 std::size_t scalar_bytes);

/// Observes a block's scratch row after each in-scratch multiply: (row,
/// block index, depth 1..group size, scratch contents). Runs on the thread
/// that owns the block.
template <typename T>
using ScratchObserver =
    std::function<void(std::size_t row, std::size_t block, std::size_t depth, std::span<const T>)>;

/// One fused pass: applies `factors` (used last to first) to `m` rows of
/// width `k` in `in`, writing the m × k·(Q/P)^n result to `out`.
template <typename T>
void fused_pass_into(std::span<const T> in, std::span<T> out, std::size_t m, std::size_t k,
                     std::span<const Matrix<T>* const> factors, const FuseConfig& cfg,
                     OpCounters* counters, const ExecOptions& opts,
                     const std::type_identity_t<ScratchObserver<T>>& observer = {});

/// Kron-Matmul in ceil(N / fused) passes over main storage. Runs of factors
/// whose shape is not P×Q are applied one at a time.
template <typename T>
Matrix<T> fused_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain, const FuseConfig& cfg,
                           OpCounters* counters = nullptr, const ExecOptions& opts = {},
                           const std::type_identity_t<ScratchObserver<T>>& observer = {});

}  // namespace kron
