#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kron/fusion.hpp"

namespace kron {

/// One point of the search space: a tile geometry and the number of factors
/// fused per pass (1 means the plain tiled path).
struct Candidate {
  TileConfig tile;
  std::size_t fused = 1;

  friend bool operator==(const Candidate&, const Candidate&) = default;
  friend auto operator<=>(const Candidate&, const Candidate&) = default;
};

struct TuneSpace {
  std::vector<Candidate> candidates;
  std::size_t budget = kDefaultScratchBytes;
  std::size_t max_candidates = 10000;
  std::size_t enumerated = 0;  // size before the cap was applied
};

inline constexpr std::size_t kNoFactorLimit = std::numeric_limits<std::size_t>::max();

/// All tile configurations for an (m × k) by (p × q) sliced multiply that
/// fit `budget`, largest tileK first, truncated to `max_candidates`. Fusion
/// depth is the deepest valid one (at most `n`) whenever tileP == P and
/// tileQ == Q. Throws ConfigError when nothing fits.
TuneSpace enumerate_configs(std::size_t m, std::size_t p, std::size_t q, std::size_t k,
                            std::size_t budget, std::size_t scalar_bytes,
                            std::size_t n = kNoFactorLimit, std::size_t max_candidates = 10000);

/// Why `cand` cannot run the whole chain of `problem`, or nullopt.
std::optional<std::string> candidate_violation(const Problem& problem, const Candidate& cand,
                                               std::size_t budget, std::size_t scalar_bytes);

/// Counters a run of `cand` over `problem` produces, derived without running.
OpCounters predict_counters(const Problem& problem, const Candidate& cand);

/// macs + 4·main accesses + scratch accesses.
double counter_cost(const OpCounters& c);

enum class CostModel { Wall, Counter };

std::string_view to_string(CostModel model);
CostModel parse_cost_model(std::string_view text);

struct TuneOptions {
  CostModel cost_model = CostModel::Wall;
  std::size_t trials = 3;        // timed runs per candidate after one warmup
  double time_cap_seconds = 30;  // wall mode stops starting new candidates after this
  std::size_t jobs = 1;          // candidates timed concurrently
  std::uint64_t seed = 1;
};

struct CandidateResult {
  Candidate candidate;
  double cost = 0;  // median milliseconds or counter cost
  bool disqualified = false;
  std::string reason;
};

struct TuneResult {
  Candidate best;
  double best_cost = 0;
  Candidate default_candidate;
  double default_cost = 0;
  std::vector<CandidateResult> results;  // in evaluation order, default first
  std::size_t skipped = 0;               // not evaluated because of the time cap
  bool verified = false;
};

/// The configuration TilePolicy::automatic picks for the first factor.
Candidate default_candidate(const Problem& problem, std::size_t budget, std::size_t scalar_bytes);

/// Runs the chain of `problem` with `cand`.
template <typename T>
Matrix<T> run_candidate(const Matrix<T>& x, const FactorChain<T>& chain, const Candidate& cand,
                        OpCounters* counters = nullptr, const ExecOptions& opts = {});

/// Scores every candidate of `space` (plus the default configuration) on
/// random data for `problem` and returns the cheapest one that reproduces
/// the untiled result and passes a probe against an independent oracle.
/// The problem's factors must all share one shape.
template <typename T>
TuneResult autotune(const Problem& problem, const TuneSpace& space, const TuneOptions& opts = {});

/// Tuned configurations keyed by (m, p, q, n, dtype), stored one per line as
/// m,p,q,n,dtype,tileM,tileK,tileP,tileQ,regK,regP,regQ,fused.
class TuneCache {
 public:
  struct Key {
    std::size_t m, p, q, n;
    DType dtype;
    friend auto operator<=>(const Key&, const Key&) = default;
  };

  /// Missing file gives an empty cache; malformed lines throw ParseError.
  static TuneCache load(const std::string& path);
  void save(const std::string& path) const;

  std::optional<Candidate> find(const Key& key) const;
  void put(const Key& key, const Candidate& cand) { entries_[key] = cand; }
  std::size_t size() const noexcept { return entries_.size(); }

  static std::string format_line(const Key& key, const Candidate& cand);
  static std::pair<Key, Candidate> parse_line(const std::string& line);

 private:
  std::map<Key, Candidate> entries_;
};

}  // namespace kron
