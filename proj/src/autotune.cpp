#include "kron/autotune.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "kron/baselines.hpp"

namespace kron {

namespace {

std::string num(std::size_t v) { return std::to_string(v); }

std::vector<std::size_t> divisors(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

// Deepest fusion valid for this tile, or 1.
std::size_t derived_fusion(const TileConfig& t, std::size_t p, std::size_t q, std::size_t n,
                           std::size_t budget, std::size_t scalar_bytes) {
  if (t.tile_p != p || t.tile_q != q || n < 2) return 1;
  const FuseLimits limits;
  if (p > limits.max_p || q > limits.max_q) return 1;
  for (std::size_t f = std::min(max_fused(p, t.tile_k), n); f >= 2; --f) {
    if (t.tile_k % ipow(p, f) != 0) continue;
    const auto cfg = FuseConfig::make(f, t, p, q);
    if (cfg.scratch_scalars(f) * scalar_bytes <= budget) return f;
  }
  return 1;
}

// Sizes of the passes fused_kronmatmul makes over a uniform chain of n
// factors, in execution order.
std::vector<std::size_t> group_sizes(std::size_t n, std::size_t fused) {
  std::vector<std::size_t> out;
  for (std::size_t left = n; left > 0;) {
    const std::size_t g = std::min(fused, left);
    out.push_back(g);
    left -= g;
  }
  return out;
}

void predict_tiled(OpCounters& c, std::size_t m, std::size_t w, std::size_t p, std::size_t q,
                   const TileConfig& t) {
  const std::uint64_t mb = (m + t.tile_m - 1) / t.tile_m;
  const std::uint64_t kb = w / t.tile_k;
  const std::uint64_t qb = q / t.tile_q;
  const std::uint64_t outs = static_cast<std::uint64_t>(m) * (w / p) * q;
  c.macs += outs * p;
  c.main_loads += static_cast<std::uint64_t>(m) * w * qb;
  c.main_stores += outs;
  c.scratch_stores += static_cast<std::uint64_t>(m) * w * qb + mb * kb * qb * p * t.tile_q;
  c.scratch_loads += static_cast<std::uint64_t>(m) * w * q / t.reg_q + mb * w * q / t.reg_k;
}

void predict_fused(OpCounters& c, std::size_t m, std::size_t w, std::size_t p, std::size_t q,
                   std::size_t depth, const TileConfig& t) {
  const std::uint64_t row_blocks = static_cast<std::uint64_t>(m) * (w / t.tile_k);
  OpCounters per;
  per.main_loads = t.tile_k;
  per.scratch_stores = t.tile_k;
  std::uint64_t width = t.tile_k;
  for (std::size_t d = 1; d <= depth; ++d) {
    width = width / p * q;
    per.macs += width * p;
    per.scratch_loads += width * p + p * q;
    per.scratch_stores += p * q;
    if (d < depth) per.scratch_stores += width;
  }
  per.main_stores = width;
  c.macs += row_blocks * per.macs;
  c.main_loads += row_blocks * per.main_loads;
  c.main_stores += row_blocks * per.main_stores;
  c.scratch_loads += row_blocks * per.scratch_loads;
  c.scratch_stores += row_blocks * per.scratch_stores;
}

}  // namespace

TuneSpace enumerate_configs(std::size_t m, std::size_t p, std::size_t q, std::size_t k,
                            std::size_t budget, std::size_t scalar_bytes, std::size_t n,
                            std::size_t max_candidates) {
  if (m == 0 || p == 0 || q == 0 || k == 0 || k % p != 0) {
    throw DimensionError("cannot tune a " + num(m) + "x" + num(k) + " input with a " + num(p) +
                         "x" + num(q) + " factor");
  }
  TuneSpace space;
  space.budget = budget;
  space.max_candidates = max_candidates;
  const SliceShape shape{m, k, p, q};
  const auto slice_counts = divisors(k / p);
  for (auto it = slice_counts.rbegin(); it != slice_counts.rend(); ++it) {
    const std::size_t tile_k = *it * p;
    for (std::size_t tile_p : divisors(p)) {
      for (std::size_t tile_q : divisors(q)) {
        for (std::size_t tile_m = 1; tile_m <= m; tile_m *= 2) {
          TileConfig t{tile_m, tile_k, tile_p, tile_q, 1, 1, 1};
          if (tile_violation(t, shape, budget, scalar_bytes)) break;  // only grows with tileM
          const std::size_t fused = derived_fusion(t, p, q, n, budget, scalar_bytes);
          for (std::size_t reg_k : divisors(tile_k / p))
            for (std::size_t reg_p : divisors(tile_p))
              for (std::size_t reg_q : divisors(tile_q)) {
                ++space.enumerated;
                if (space.candidates.size() >= max_candidates) continue;
                t.reg_k = reg_k;
                t.reg_p = reg_p;
                t.reg_q = reg_q;
                space.candidates.push_back({t, fused});
              }
        }
      }
    }
  }
  if (space.candidates.empty()) {
    throw ConfigError("no tile configuration fits a scratch budget of " + num(budget) +
                      " bytes for P=" + num(p) + ", Q=" + num(q));
  }
  return space;
}

std::optional<std::string> candidate_violation(const Problem& problem, const Candidate& cand,
                                               std::size_t budget, std::size_t scalar_bytes) {
  const std::size_t m = problem.m;
  if (cand.fused > 1) {
    if (!problem.uniform()) return "fusion needs factors of one shape";
    const std::size_t p = problem.shapes[0].p;
    const std::size_t q = problem.shapes[0].q;
    std::optional<FuseConfig> cfg;
    try {
      cfg = FuseConfig::make(cand.fused, cand.tile, p, q);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    std::size_t w = problem.k;
    for (std::size_t g : group_sizes(problem.n(), cand.fused)) {
      if (g == 1) {
        if (auto v = tile_violation(cand.tile, {m, w, p, q}, budget, scalar_bytes)) return v;
      } else {
        if (w % cand.tile.tile_k != 0) {
          return "tileK=" + num(cand.tile.tile_k) + " does not divide K=" + num(w);
        }
        if (cfg->scratch_scalars(g) * scalar_bytes > budget) {
          return "fused scratch footprint exceeds budget " + num(budget);
        }
      }
      w = w / ipow(p, g) * ipow(q, g);
    }
    return std::nullopt;
  }
  for (std::size_t f = problem.n(); f-- > 0;) {
    const auto& s = problem.shapes[f];
    if (auto v = tile_violation(cand.tile, {m, problem.input_width(f), s.p, s.q}, budget,
                                scalar_bytes)) {
      return "factor " + num(f + 1) + ": " + *v;
    }
  }
  return std::nullopt;
}

OpCounters predict_counters(const Problem& problem, const Candidate& cand) {
  OpCounters c;
  if (cand.fused > 1) {
    const std::size_t p = problem.shapes[0].p;
    const std::size_t q = problem.shapes[0].q;
    std::size_t w = problem.k;
    for (std::size_t g : group_sizes(problem.n(), cand.fused)) {
      if (g == 1) predict_tiled(c, problem.m, w, p, q, cand.tile);
      else predict_fused(c, problem.m, w, p, q, g, cand.tile);
      w = w / ipow(p, g) * ipow(q, g);
    }
    return c;
  }
  for (std::size_t f = problem.n(); f-- > 0;) {
    const auto& s = problem.shapes[f];
    predict_tiled(c, problem.m, problem.input_width(f), s.p, s.q, cand.tile);
  }
  return c;
}

double counter_cost(const OpCounters& c) {
  return static_cast<double>(c.macs) + 4.0 * static_cast<double>(c.main_accesses()) +
         static_cast<double>(c.scratch_accesses());
}

std::string_view to_string(CostModel model) {
  return model == CostModel::Wall ? "wall" : "counter";
}

CostModel parse_cost_model(std::string_view text) {
  if (text == "wall") return CostModel::Wall;
  if (text == "counter") return CostModel::Counter;
  throw ConfigError("unknown cost model '" + std::string(text) + "' (expected wall or counter)");
}

Candidate default_candidate(const Problem& problem, std::size_t budget,
                            std::size_t scalar_bytes) {
  const auto& s = problem.shapes.back();
  return {default_tile_config({problem.m, problem.k, s.p, s.q}, budget, scalar_bytes), 1};
}

template <typename T>
Matrix<T> run_candidate(const Matrix<T>& x, const FactorChain<T>& chain, const Candidate& cand,
                        OpCounters* counters, const ExecOptions& opts) {
  if (cand.fused > 1) {
    const auto& f = chain[0];
    return fused_kronmatmul(x, chain, FuseConfig::make(cand.fused, cand.tile, f.rows(), f.cols()),
                            counters, opts);
  }
  return sliced_kronmatmul(x, chain, TilePolicy::fixed(cand.tile), counters, opts);
}

template <typename T>
TuneResult autotune(const Problem& problem, const TuneSpace& space, const TuneOptions& opts) {
  if (!problem.uniform()) throw ConfigError("autotune needs every factor to share one shape");
  if (space.candidates.empty()) throw ConfigError("empty tuning space");
  const std::size_t bytes = sizeof(T);
  const ExecOptions exec{space.budget, 1};

  TuneResult result;
  result.default_candidate = default_candidate(problem, space.budget, bytes);

  // Default first, then the space in order of predicted cost.
  std::vector<Candidate> order;
  order.push_back(result.default_candidate);
  {
    std::vector<std::pair<double, Candidate>> ranked;
    for (const auto& c : space.candidates) {
      if (c == result.default_candidate) continue;
      ranked.emplace_back(counter_cost(predict_counters(problem, c)), c);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& r : ranked) order.push_back(r.second);
  }

  std::vector<CandidateResult> results(order.size());
  std::vector<char> evaluated(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    results[i].candidate = order[i];
    if (auto v = candidate_violation(problem, order[i], space.budget, bytes)) {
      results[i].disqualified = true;
      results[i].reason = *v;
      evaluated[i] = 1;
    }
  }

  if (opts.cost_model == CostModel::Counter) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (!results[i].disqualified) {
        results[i].cost = counter_cost(predict_counters(problem, order[i]));
      }
      evaluated[i] = 1;
    }
  } else {
    std::mt19937_64 rng(opts.seed);
    std::vector<Matrix<T>> factors;
    for (const auto& s : problem.shapes) factors.push_back(random_real_matrix<T>(s.p, s.q, rng));
    const FactorChain<T> chain(std::move(factors));
    const Matrix<T> x = random_real_matrix<T>(problem.m, problem.k, rng);
    const Matrix<T> reference = sliced_kronmatmul(x, chain);

    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < order.size(); i = next++) {
        if (results[i].disqualified) continue;
        const std::chrono::duration<double> elapsed = Clock::now() - start;
        if (i > 0 && elapsed.count() > opts.time_cap_seconds) continue;
        evaluated[i] = 1;
        try {
          if (run_candidate(x, chain, order[i], nullptr, exec) != reference) {
            results[i].disqualified = true;
            results[i].reason = "output differs from the untiled result";
            continue;
          }
          std::vector<double> times;
          for (std::size_t t = 0; t < std::max<std::size_t>(1, opts.trials); ++t) {
            const auto t0 = Clock::now();
            (void)run_candidate(x, chain, order[i], nullptr, exec);
            times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
          }
          std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
          results[i].cost = times[times.size() / 2];
        } catch (const Error& e) {
          results[i].disqualified = true;
          results[i].reason = e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < std::max<std::size_t>(1, opts.jobs); ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!evaluated[i]) {
      ++result.skipped;
      continue;
    }
    result.results.push_back(results[i]);
  }
  result.default_cost = results[0].cost;

  // Cheapest first; ties keep evaluation order.
  std::vector<std::size_t> ranking;
  for (std::size_t i = 0; i < result.results.size(); ++i)
    if (!result.results[i].disqualified) ranking.push_back(i);
  std::stable_sort(ranking.begin(), ranking.end(), [&](std::size_t a, std::size_t b) {
    return result.results[a].cost < result.results[b].cost;
  });

  std::mt19937_64 probe_rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t idx : ranking) {
    auto& r = result.results[idx];
    // The probe spans one full row block plus a partial one.
    const std::size_t rows = std::min(problem.m, r.candidate.tile.tile_m + 1);
    std::vector<Matrix<T>> factors;
    for (const auto& s : problem.shapes)
      factors.push_back(random_integer_matrix<T>(s.p, s.q, probe_rng, 1));
    const FactorChain<T> chain(std::move(factors));
    const Matrix<T> x = random_integer_matrix<T>(rows, problem.k, probe_rng, 1);
    const bool small = problem.k * problem.l <= kNaiveElementCap &&
                       rows * problem.k * problem.l <= (std::size_t{1} << 28);
    const Matrix<T> want = small ? naive_kronmatmul(x, chain) : ftmmt_kronmatmul(x, chain);
    Matrix<T> got = run_candidate(x, chain, r.candidate, nullptr, exec);
    if (got == want) {
      result.best = r.candidate;
      result.best_cost = r.cost;
      result.verified = true;
      return result;
    }
    r.disqualified = true;
    r.reason = "probe result differs from the oracle";
  }
  throw ConfigError("no tuning candidate produced a verified result");
}

TuneCache TuneCache::load(const std::string& path) {
  TuneCache cache;
  std::ifstream in(path);
  if (!in) return cache;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto [key, cand] = parse_line(line);
    cache.put(key, cand);
  }
  return cache;
}

void TuneCache::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write tuning cache " + path);
  for (const auto& [key, cand] : entries_) out << format_line(key, cand) << '\n';
}

std::optional<Candidate> TuneCache::find(const Key& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string TuneCache::format_line(const Key& key, const Candidate& cand) {
  std::ostringstream os;
  os << key.m << ',' << key.p << ',' << key.q << ',' << key.n << ',' << to_string(key.dtype)
     << ',' << cand.tile.to_string() << ',' << cand.fused;
  return os.str();
}

std::pair<TuneCache::Key, Candidate> TuneCache::parse_line(const std::string& line) {
  std::vector<std::pair<std::string, std::size_t>> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.emplace_back(line.substr(start, i - start), start);
      start = i + 1;
    }
  }
  if (fields.size() != 13) {
    throw ParseError("tuning cache line needs 13 fields, got " + num(fields.size()),
                     line.size());
  }
  std::size_t values[13] = {};
  for (std::size_t i = 0; i < 13; ++i) {
    if (i == 4) continue;
    const auto& [text, pos] = fields[i];
    std::size_t used = 0;
    try {
      values[i] = std::stoul(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (text.empty() || used != text.size() || text[0] == '-') {
      throw ParseError("expected an unsigned integer, got '" + text + "'", pos);
    }
  }
  DType dtype;
  try {
    dtype = parse_dtype(fields[4].first);
  } catch (const Error&) {
    throw ParseError("unknown dtype '" + fields[4].first + "'", fields[4].second);
  }
  Key key{values[0], values[1], values[2], values[3], dtype};
  Candidate cand{{values[5], values[6], values[7], values[8], values[9], values[10], values[11]},
                 values[12]};
  return {key, cand};
}

#define KRON_INSTANTIATE(T)                                                                   \
  template Matrix<T> run_candidate(const Matrix<T>&, const FactorChain<T>&, const Candidate&, \
                                   OpCounters*, const ExecOptions&);                          \
  template TuneResult autotune<T>(const Problem&, const TuneSpace&, const TuneOptions&);

KRON_INSTANTIATE(float)
KRON_INSTANTIATE(double)
#undef KRON_INSTANTIATE

}  // namespace kron
