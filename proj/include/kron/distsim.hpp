#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kron/core.hpp"

namespace kron {

/// A {gm, gk} grid of simulated workers: gm row groups by gk column groups.
struct ProcGrid {
  std::size_t gm = 1;
  std::size_t gk = 1;

  std::size_t total() const noexcept { return gm * gk; }
  std::string to_string() const;  // "GMxGK"
  /// Parses "GMxGK"; throws ParseError.
  static ProcGrid parse(const std::string& text);

  friend bool operator==(const ProcGrid&, const ProcGrid&) = default;
};

/// {sqrt g, sqrt g} for square g, otherwise {2^ceil(log2 sqrt g), 2^floor(log2 sqrt g)}.
/// Throws CapacityError when that grid does not have exactly g workers.
ProcGrid select_grid(std::size_t g);

struct WorkerId {
  std::size_t gm = 0;
  std::size_t gk = 0;
  friend auto operator<=>(const WorkerId&, const WorkerId&) = default;
};

/// Geometry of one round: `local` sliced multiplies on every worker's block,
/// then a relocation among workers of the same row group.
struct RoundGeometry {
  std::size_t first_factor = 0;  // 0-based index of the last factor applied this round
  std::size_t local = 0;
  std::size_t k_in = 0;
  std::size_t k_out = 0;
  std::size_t g_tile_k_in = 0;   // k_in / GK
  std::size_t g_tile_k_out = 0;  // k_out / GK
};

class DistPlan {
 public:
  /// `local` = 0 picks, per round, the deepest valid depth capped by the
  /// factors that remain. Throws ConfigError on indivisible M or K, mixed
  /// factor shapes, or a depth beyond floor(log_P gTileK).
  static DistPlan make(std::size_t m, const std::vector<FactorShape>& shapes, ProcGrid grid,
                       std::size_t local = 0);

  const ProcGrid& grid() const noexcept { return grid_; }
  std::size_t m() const noexcept { return m_; }
  std::size_t p() const noexcept { return p_; }
  std::size_t q() const noexcept { return q_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t k() const noexcept { return rounds_.front().k_in; }
  std::size_t g_tile_m() const noexcept { return m_ / grid_.gm; }
  std::size_t g_tile_k() const noexcept { return rounds_.front().g_tile_k_in; }
  std::size_t local() const noexcept { return rounds_.front().local; }
  std::size_t rounds() const noexcept { return rounds_.size(); }
  const RoundGeometry& round(std::size_t r) const { return rounds_.at(r); }

 private:
  ProcGrid grid_;
  std::size_t m_ = 0, p_ = 0, q_ = 0, n_ = 0;
  std::vector<RoundGeometry> rounds_;
};

/// Scalars sent between workers, per round and (src, dst) pair.
class CommLedger {
 public:
  using Round = std::map<std::pair<WorkerId, WorkerId>, std::uint64_t>;

  void record(std::size_t round, WorkerId src, WorkerId dst, std::uint64_t scalars);

  const std::vector<Round>& per_round() const noexcept { return rounds_; }
  std::uint64_t total_sent() const;
  std::uint64_t cross_row_scalars() const;
  std::uint64_t messages() const;

  /// round,src_gm,src_gk,dst_gm,dst_gk,scalars with a header line.
  std::string trace_csv() const;

  friend bool operator==(const CommLedger&, const CommLedger&) = default;

 private:
  std::vector<Round> rounds_;
};

/// Global column of element `c` of worker `src_gk`'s block after round `r`'s
/// local multiplies.
std::size_t relocated_column(const DistPlan& plan, std::size_t r, std::size_t src_gk,
                             std::size_t c);

/// Local element indices of worker `src_gk` destined for each column group
/// after round `r`, in increasing order.
std::vector<std::vector<std::size_t>> relocation_parts(const DistPlan& plan, std::size_t r,
                                                       std::size_t src_gk);

/// Scalars the relocations move: rounds·GM·gTileM·(K - gTileK) generalised to
/// per-round widths.
std::uint64_t comm_volume(const DistPlan& plan);

/// GM·N·gTileM·(K - gTileK) / log_P gTileK, defined only when local equals
/// log_P gTileK exactly and divides N.
std::optional<std::uint64_t> closed_form_comm_volume(const DistPlan& plan);

/// Places a received part into the destination block. `part` is
/// rows × (elements of relocation_parts(plan, r, src_gk)[dst_gk]), row-major.
/// Throws ProtocolError when the part size does not match.
template <typename T>
void store_gpu_tile(std::span<const T> part, std::size_t src_gk, std::size_t dst_gk,
                    const DistPlan& plan, std::size_t r, Matrix<T>& dst_block);

struct DistOptions {
  bool threaded = false;  // one thread per worker with a barrier per phase
};

template <typename T>
struct DistResult {
  Matrix<T> y;
  CommLedger ledger;
  OpCounters counters;  // summed over workers
};

/// Called after every round with the gathered M × k_out intermediate.
template <typename T>
using RoundObserver = std::function<void(std::size_t round, const Matrix<T>& gathered)>;

template <typename T>
DistResult<T> dist_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                              const DistPlan& plan, const DistOptions& opts = {},
                              const std::type_identity_t<RoundObserver<T>>& observer = {});

/// One line of a scenario file: m,p,q,n,gm,gk,local,dtype,seed.
struct Scenario {
  std::size_t m = 1, p = 2, q = 2, n = 1;
  ProcGrid grid;
  std::size_t local = 0;
  DType dtype = DType::F64;
  std::uint64_t seed = 1;

  static Scenario parse(const std::string& line);
  std::string to_string() const;
};

std::vector<Scenario> load_scenarios(const std::string& path);

}  // namespace kron
