#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>

#include "kron/core.hpp"

namespace kron {

/// Default scratch budget per block, the analogue of GPU shared memory.
inline constexpr std::size_t kDefaultScratchBytes = 48 * 1024;

/// Block and micro-tile extents for one sliced multiply.
///
/// A block covers `tile_m` rows, `tile_k` input columns (tile_k / P slices)
/// and `tile_q` factor columns. The P dimension is walked in steps of
/// `tile_p`; each step stages (tile_k / P) · tile_p elements per row and a
/// tile_p × tile_q factor tile into scratch. Within a block a micro-tile
/// owns `reg_k` slices × `reg_q` columns and consumes `reg_p` factor rows at
/// a time.
struct TileConfig {
  std::size_t tile_m = 1;
  std::size_t tile_k = 1;
  std::size_t tile_p = 1;
  std::size_t tile_q = 1;
  std::size_t reg_k = 1;
  std::size_t reg_p = 1;
  std::size_t reg_q = 1;

  /// Scalars of scratch one block needs for a factor with `p` rows.
  std::size_t scratch_scalars(std::size_t p) const noexcept {
    return tile_m * (tile_k / p) * tile_p + tile_p * tile_q;
  }

  /// "tileM,tileK,tileP,tileQ,regK,regP,regQ"
  std::string to_string() const;
  /// Inverse of to_string; throws ConfigError.
  static TileConfig parse(const std::string& text);

  friend bool operator==(const TileConfig&, const TileConfig&) = default;
  friend auto operator<=>(const TileConfig&, const TileConfig&) = default;
};

/// Geometry of one sliced multiply: input (m × k) times factor (p × q).
struct SliceShape {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t p = 0;
  std::size_t q = 0;
};

/// First violated invariant of `cfg` for `shape`, or nullopt when valid.
std::optional<std::string> tile_violation(const TileConfig& cfg, const SliceShape& shape,
                                          std::size_t scratch_bytes, std::size_t scalar_bytes);

/// Throws ConfigError naming the violated invariant.
void validate_tile(const TileConfig& cfg, const SliceShape& shape, std::size_t scratch_bytes,
                   std::size_t scalar_bytes);

/// A valid configuration chosen by a fixed heuristic: widest tile_p/tile_q,
/// then widest tile_k, then tallest tile_m that fit the budget.
TileConfig default_tile_config(const SliceShape& shape, std::size_t scratch_bytes,
                               std::size_t scalar_bytes);

// ---------------------------------------------------------------------------
// Shift caching.
//
// Staging writes element `elem` of slice `s` to s·tile_p + (elem + s/reg_k)
// mod tile_p, rotating each group of reg_k slices by one more position. The
// micro-kernel reads through the matching load map, so the rotation is
// invisible to the arithmetic.

/// Scratch position of staged linear index `k` (slice k / tile_p, element
/// k mod tile_p).
constexpr std::size_t shift_store_index(std::size_t k, std::size_t tile_p,
                                        std::size_t reg_k) noexcept {
  const std::size_t elem = k % tile_p;
  const std::size_t slice = k / tile_p;
  const std::size_t shift = slice / reg_k;
  return slice * tile_p + (elem + shift) % tile_p;
}

/// Scratch position holding element `p` of slice `slice`.
constexpr std::size_t shift_load_index(std::size_t slice, std::size_t p, std::size_t tile_p,
                                       std::size_t reg_k) noexcept {
  return slice * tile_p + (p + slice / reg_k) % tile_p;
}

/// Output column written for factor column `local_col` (within the block's
/// tile_q) and slice `local_slice` (within the block's tile_k / P slices) of
/// block (k_block, q_block).
std::size_t tile_output_column(std::size_t local_col, std::size_t local_slice,
                               std::size_t k_block, std::size_t q_block,
                               const TileConfig& cfg, const SliceShape& shape);

struct ExecOptions {
  std::size_t scratch_bytes = kDefaultScratchBytes;
  std::size_t threads = 1;  // blocks are spread over this many workers
};

/// One pass of the transpose-free algorithm: output column j of the
/// M × (K/P)·Q result is slice (j mod K/P) of the input row times factor
/// column (j div K/P).
template <typename T>
Matrix<T> sliced_multiply(const Matrix<T>& y_in, const Matrix<T>& f,
                          OpCounters* counters = nullptr);

/// Blocked execution of sliced_multiply. Output is bit-identical to it: every
/// output element accumulates its P products in order of increasing p.
template <typename T>
Matrix<T> tiled_sliced_multiply(const Matrix<T>& y_in, const Matrix<T>& f,
                                const TileConfig& cfg, OpCounters* counters = nullptr,
                                const ExecOptions& opts = {});

/// Span-level entry used by the sweeps: reads `m` rows of width `k` from
/// `in`, writes `m` rows of width (k/P)·Q to `out`.
template <typename T>
void tiled_sliced_multiply_into(std::span<const T> in, std::span<T> out, std::size_t m,
                                std::size_t k, const Matrix<T>& f, const TileConfig& cfg,
                                OpCounters* counters, const ExecOptions& opts);

template <typename T>
void sliced_multiply_into(std::span<const T> in, std::span<T> out, std::size_t m, std::size_t k,
                          const Matrix<T>& f, OpCounters* counters);

/// Selects how each factor of a sweep is executed.
struct TilePolicy {
  enum class Kind { Untiled, Fixed, Auto };
  Kind kind = Kind::Untiled;
  TileConfig config{};  // used when kind == Fixed

  static TilePolicy untiled() { return {}; }
  static TilePolicy fixed(const TileConfig& c) { return {Kind::Fixed, c}; }
  static TilePolicy automatic() { return {Kind::Auto, {}}; }
};

/// Applies the factors last to first through two ping-pong buffers of
/// M × max_interm scalars.
template <typename T>
Matrix<T> sliced_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                            const TilePolicy& policy = TilePolicy::untiled(),
                            OpCounters* counters = nullptr, const ExecOptions& opts = {},
                            const std::type_identity_t<StepObserver<T>>& observer = {});

}  // namespace kron
