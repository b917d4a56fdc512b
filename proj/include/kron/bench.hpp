#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kron/autotune.hpp"
#include "kron/distsim.hpp"

namespace kron {

/// Relative Frobenius tolerance for inputs that are not exactly representable
/// sums.
inline constexpr double kRelTolF32 = 1e-6;
inline constexpr double kRelTolF64 = 1e-12;

enum class Algorithm { Naive, Shuffle, Ftmmt, Sliced, Fused, Dist };

std::string_view to_string(Algorithm algo);
/// Throws ConfigError for unknown names.
Algorithm parse_algorithm(std::string_view text);

/// A problem shape as written on the command line: `-m INT -f PxQ[,PxQ...]`
/// where an item may be `P^N` (N factors P×P) or `PxQ^N`.
struct ProblemSpec {
  std::size_t m = 0;
  std::vector<FactorShape> shapes;
  std::string note;  // e.g. how a preset row was reduced

  /// `-m M -f ...` with runs of equal factors folded into `^N`.
  std::string canonical() const;
  /// canonical() followed by the note in brackets, if any.
  std::string label() const;
  Problem problem() const { return Problem(m, shapes); }

  friend bool operator==(const ProblemSpec& a, const ProblemSpec& b) {
    return a.m == b.m && a.shapes == b.shapes;
  }
};

/// Throws ParseError carrying the offset of the offending character.
ProblemSpec parse_spec(std::string_view text);

struct RunConfig {
  Algorithm algo = Algorithm::Sliced;
  DType dtype = DType::F32;
  std::uint64_t seed = 1;
  bool verify = false;
  bool real = false;  // uniform reals instead of small integers
  std::optional<TileConfig> tile;
  std::size_t fused = 0;  // 0 picks the deepest valid depth
  std::size_t budget = kDefaultScratchBytes;
  std::size_t threads = 1;
  ProcGrid grid;
  std::size_t local = 0;
  bool threaded_dist = false;
  CostModel cost_model = CostModel::Wall;
  std::size_t repeat = 1;  // timed runs; the median is reported
};

struct RunRecord {
  std::string spec;
  Algorithm algo = Algorithm::Sliced;
  DType dtype = DType::F32;
  std::uint64_t seed = 0;
  double wall_ms = 0;
  OpCounters counters;
  double gflops = 0;
  std::optional<bool> verified;  // empty when verification was not requested
  std::optional<std::uint64_t> comm_total;
  std::string reference;  // oracle used for verification
  Mismatch mismatch;
  double rel_error = 0;
};

/// Inputs are drawn from `seed`: integers in [-2, 2], or reals in [-1, 1).
RunRecord run(const ProblemSpec& spec, const RunConfig& cfg);

/// Base tile for fusing runs of up to `fused` factors of shape `shape`
/// (default: the last factor's): tileP = P, tileQ = Q, the smallest tileK
/// valid at every width of the sweep, tallest tileM that fits. Throws
/// ConfigError when no such tile exists.
TileConfig default_fuse_tile(const Problem& problem, std::size_t fused, std::size_t budget,
                             std::size_t scalar_bytes,
                             std::optional<FactorShape> shape = std::nullopt);

std::string csv_header();
/// Wall time and GFLOPS are left empty under the counter cost model so the
/// row depends only on the problem text and seed.
std::string csv_row(const RunRecord& rec, CostModel model);

/// The real-world shapes table, one entry per M value, with N reduced until
/// K <= 2^16.
std::vector<ProblemSpec> desk_suite();

}  // namespace kron
