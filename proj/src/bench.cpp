#include "kron/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cctype>
#include <functional>
#include <iomanip>
#include <sstream>

#include "kron/baselines.hpp"

namespace kron {

std::string_view to_string(Algorithm algo) {
  switch (algo) {
    case Algorithm::Naive: return "naive";
    case Algorithm::Shuffle: return "shuffle";
    case Algorithm::Ftmmt: return "ftmmt";
    case Algorithm::Sliced: return "sliced";
    case Algorithm::Fused: return "fused";
    case Algorithm::Dist: return "dist";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  for (Algorithm a : {Algorithm::Naive, Algorithm::Shuffle, Algorithm::Ftmmt, Algorithm::Sliced,
                      Algorithm::Fused, Algorithm::Dist})
    if (to_string(a) == text) return a;
  throw ConfigError("unknown algorithm '" + std::string(text) +
                    "' (expected naive, shuffle, ftmmt, sliced, fused or dist)");
}

std::string ProblemSpec::canonical() const {
  std::ostringstream os;
  os << "-m " << m << " -f ";
  for (std::size_t i = 0; i < shapes.size();) {
    std::size_t j = i;
    while (j < shapes.size() && shapes[j] == shapes[i]) ++j;
    const auto& s = shapes[i];
    if (i > 0) os << ',';
    if (j - i == 1) os << s.p << 'x' << s.q;
    else if (s.p == s.q) os << s.p << '^' << (j - i);
    else os << s.p << 'x' << s.q << '^' << (j - i);
    i = j;
  }
  return os.str();
}

std::string ProblemSpec::label() const {
  return note.empty() ? canonical() : canonical() + " [" + note + "]";
}

namespace {

class SpecParser {
 public:
  explicit SpecParser(std::string_view text) : text_(text) {}

  ProblemSpec parse() {
    if (text_.empty()) throw ParseError("empty problem spec", 0);
    ProblemSpec spec;
    bool have_m = false, have_f = false;
    skip_ws();
    while (pos_ < text_.size()) {
      const std::size_t flag_pos = pos_;
      expect('-', "expected '-m' or '-f'");
      if (pos_ >= text_.size()) throw ParseError("expected 'm' or 'f' after '-'", pos_);
      const char flag = text_[pos_++];
      if (flag != 'm' && flag != 'f') throw ParseError("unknown flag", flag_pos);
      if (pos_ >= text_.size() || !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
        throw ParseError("expected a space after the flag", pos_);
      }
      skip_ws();
      if (flag == 'm') {
        if (have_m) throw ParseError("-m given twice", flag_pos);
        spec.m = positive("row count");
        have_m = true;
      } else {
        if (have_f) throw ParseError("-f given twice", flag_pos);
        spec.shapes = factor_list();
        have_f = true;
      }
      skip_ws();
    }
    if (!have_m) throw ParseError("missing -m", pos_);
    if (!have_f) throw ParseError("missing -f", pos_);
    return spec;
  }

 private:
  std::vector<FactorShape> factor_list() {
    std::vector<FactorShape> out;
    for (;;) {
      const std::size_t item_pos = pos_;
      const std::size_t p = positive("factor rows");
      std::size_t q = p;
      bool shaped = false;
      if (peek('x')) {
        ++pos_;
        q = positive("factor columns");
        shaped = true;
      }
      std::size_t n = 1;
      if (peek('^')) {
        ++pos_;
        n = positive("repeat count");
        shaped = true;
      }
      if (!shaped) throw ParseError("expected 'x' or '^' after the factor size", pos_);
      if (n > 64) throw ParseError("repeat count above 64", item_pos);
      out.insert(out.end(), n, FactorShape{p, q});
      const std::size_t save = pos_;
      skip_ws();
      if (!peek(',')) {
        pos_ = save;
        return out;
      }
      ++pos_;
      skip_ws();
    }
  }

  std::size_t positive(const char* what) {
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      if (v > (std::size_t{1} << 40)) throw ParseError(std::string(what) + " too large", start);
      v = v * 10 + static_cast<std::size_t>(text_[pos_] - '0');
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected ") + what, start);
    if (v == 0) throw ParseError(std::string(what) + " must be positive", start);
    return v;
  }

  bool peek(char c) const { return pos_ < text_.size() && text_[pos_] == c; }

  void expect(char c, const char* msg) {
    if (!peek(c)) throw ParseError(msg, pos_);
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

std::size_t largest_divisor_at_most(std::size_t n, std::size_t cap) {
  for (std::size_t d = std::min(n, cap); d > 1; --d)
    if (n % d == 0) return d;
  return 1;
}

// Largest naive workload (M·K·L multiply-adds) used as a reference.
constexpr std::uint64_t kNaiveWorkCap = std::uint64_t{1} << 30;

struct Verdict {
  bool ok = true;
  std::string reference;
  Mismatch mismatch;
  double rel_error = 0;
};

template <typename T>
Verdict verify(const Matrix<double>& x, const FactorChain<double>& chain, const Matrix<T>& y,
               bool integer_data) {
  const Problem problem(x.rows(), chain.shapes());
  // Worst-case magnitude of any partial sum for data bounded by 2.
  double bound = 2;
  for (const auto& s : problem.shapes) bound *= 2.0 * static_cast<double>(s.p);
  const double exact_limit = std::is_same_v<T, double> ? 9007199254740992.0 : 16777216.0;
  const bool exact = integer_data && bound <= exact_limit;
  const double tol = std::is_same_v<T, double> ? kRelTolF64 : kRelTolF32;

  Verdict v;
  auto judge = [&](const Matrix<T>& got, const Matrix<double>& want) {
    const Mismatch mm = compare_exact(got, want);
    const double rel = relative_frobenius_error(got, want);
    v.rel_error = std::max(v.rel_error, rel);
    if (mm.count > 0 && v.mismatch.count == 0) v.mismatch = mm;
    if (exact ? mm.count != 0 : rel > tol) v.ok = false;
  };

  const std::uint64_t kl = static_cast<std::uint64_t>(problem.k) * problem.l;
  std::size_t naive_rows = 0;
  if (kl <= kNaiveElementCap) {
    naive_rows = static_cast<std::size_t>(
        std::min<std::uint64_t>(x.rows(), std::max<std::uint64_t>(1, kNaiveWorkCap / kl)));
    const Matrix<double> want = naive_kronmatmul(x.row_block(0, naive_rows), chain);
    judge(y.row_block(0, naive_rows), want);
    v.reference = naive_rows == x.rows() ? "naive" : "naive(rows 0-" +
                                                         std::to_string(naive_rows - 1) + ")";
  }
  if (naive_rows < x.rows()) {
    judge(y, ftmmt_kronmatmul(x, chain));
    v.reference += v.reference.empty() ? "ftmmt" : "+ftmmt";
  }
  v.reference += exact ? " exact"
                       : " rel<=" + std::string(std::is_same_v<T, double> ? "1e-12" : "1e-6");
  return v;
}

template <typename T>
RunRecord run_typed(const ProblemSpec& spec, const RunConfig& cfg) {
  const Problem problem = spec.problem();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Matrix<double>> fs;
  for (const auto& s : problem.shapes)
    fs.push_back(cfg.real ? random_real_matrix<double>(s.p, s.q, rng)
                          : random_integer_matrix<double>(s.p, s.q, rng, 2));
  const FactorChain<double> chain64(std::move(fs));
  const Matrix<double> x64 = cfg.real ? random_real_matrix<double>(problem.m, problem.k, rng)
                                      : random_integer_matrix<double>(problem.m, problem.k, rng, 2);
  const FactorChain<T> chain = chain64.template cast<T>();
  const Matrix<T> x = x64.template cast<T>();
  const ExecOptions exec{cfg.budget, cfg.threads};

  RunRecord rec;
  rec.spec = spec.label();
  rec.algo = cfg.algo;
  rec.dtype = dtype_of<T>();
  rec.seed = cfg.seed;

  std::function<Matrix<T>(OpCounters*)> body;
  switch (cfg.algo) {
    case Algorithm::Naive:
      body = [&](OpCounters* c) { return naive_kronmatmul(x, chain, c); };
      break;
    case Algorithm::Shuffle:
      body = [&](OpCounters* c) { return shuffle_kronmatmul(x, chain, c); };
      break;
    case Algorithm::Ftmmt:
      body = [&](OpCounters* c) { return ftmmt_kronmatmul(x, chain, c); };
      break;
    case Algorithm::Sliced: {
      const TilePolicy policy = cfg.tile ? TilePolicy::fixed(*cfg.tile) : TilePolicy::automatic();
      body = [&, policy](OpCounters* c) { return sliced_kronmatmul(x, chain, policy, c, exec); };
      break;
    }
    case Algorithm::Fused: {
      const auto& s = problem.shapes.back();
      std::optional<FuseConfig> fcfg;
      if (cfg.fused > 0) {
        const TileConfig tile =
            cfg.tile ? *cfg.tile : default_fuse_tile(problem, cfg.fused, cfg.budget, sizeof(T));
        fcfg = FuseConfig::make(cfg.fused, tile, s.p, s.q);
      } else {
        std::size_t deepest = problem.uniform() ? problem.n() : 1;
        for (std::size_t f = deepest; f >= 1 && !fcfg; --f) {
          try {
            const TileConfig tile =
                cfg.tile ? *cfg.tile : default_fuse_tile(problem, f, cfg.budget, sizeof(T));
            if (f > 1 && candidate_violation(problem, {tile, f}, cfg.budget, sizeof(T))) continue;
            fcfg = FuseConfig::make(f, tile, s.p, s.q);
          } catch (const ConfigError&) {
            if (f == 1) throw;
          }
        }
      }
      body = [&, fc = *fcfg](OpCounters* c) { return fused_kronmatmul(x, chain, fc, c, exec); };
      break;
    }
    case Algorithm::Dist: {
      const DistPlan plan = DistPlan::make(problem.m, problem.shapes, cfg.grid, cfg.local);
      body = [&, plan](OpCounters* c) {
        auto r = dist_kronmatmul(x, chain, plan, DistOptions{cfg.threaded_dist});
        if (c) *c += r.counters;
        rec.comm_total = r.ledger.total_sent();
        return std::move(r.y);
      };
      break;
    }
  }

  using Clock = std::chrono::steady_clock;
  std::vector<double> times;
  std::optional<Matrix<T>> y;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, cfg.repeat); ++i) {
    const auto t0 = Clock::now();
    Matrix<T> out = body(i == 0 ? &rec.counters : nullptr);
    times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    if (!y) y.emplace(std::move(out));
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  rec.wall_ms = times[times.size() / 2];
  rec.gflops = rec.wall_ms > 0 ? 2.0 * static_cast<double>(rec.counters.macs) / (rec.wall_ms * 1e6)
                               : 0.0;

  if (cfg.verify) {
    const Verdict v = verify(x64, chain64, *y, !cfg.real);
    rec.verified = v.ok;
    rec.reference = v.reference;
    rec.mismatch = v.mismatch;
    rec.rel_error = v.rel_error;
  }
  return rec;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

ProblemSpec parse_spec(std::string_view text) { return SpecParser(text).parse(); }

TileConfig default_fuse_tile(const Problem& problem, std::size_t fused, std::size_t budget,
                             std::size_t scalar_bytes, std::optional<FactorShape> shape) {
  const FactorShape s = shape.value_or(problem.shapes.back());
  const FuseLimits unlimited{kNoFactorLimit, kNoFactorLimit};
  auto fits = [&](const TileConfig& t) {
    try {
      return !fused_sweep_violation(problem, FuseConfig::make(std::max<std::size_t>(fused, 1), t,
                                                              s.p, s.q, unlimited),
                                    budget, scalar_bytes);
    } catch (const ConfigError&) {
      return false;
    }
  };
  if (fused <= 1 && !shape) {
    const auto t = default_tile_config({problem.m, problem.k, s.p, s.q}, budget, scalar_bytes);
    if (fits(t)) return t;
  }
  // Smallest tileK first, tallest tileM that fits.
  const std::size_t unit = ipow(s.p, std::max<std::size_t>(fused, 1));
  for (std::size_t tile_k = unit; tile_k <= problem.k; tile_k += unit) {
    if (problem.k % tile_k != 0) continue;
    std::size_t tile_m = 1;
    while (tile_m * 2 <= std::min<std::size_t>(problem.m, 16)) tile_m *= 2;
    for (; tile_m >= 1; tile_m /= 2) {
      const TileConfig t{tile_m, tile_k, s.p, s.q, largest_divisor_at_most(tile_k / s.p, 4),
                         largest_divisor_at_most(s.p, 8), largest_divisor_at_most(s.q, 4)};
      if (fits(t)) return t;
    }
  }
  throw ConfigError("no base tile lets " + std::to_string(fused) +
                    " factors per pass run over every width of the chain within " +
                    std::to_string(budget) + " bytes");
}

RunRecord run(const ProblemSpec& spec, const RunConfig& cfg) {
  return cfg.dtype == DType::F32 ? run_typed<float>(spec, cfg) : run_typed<double>(spec, cfg);
}

std::string csv_header() {
  return "spec,algorithm,dtype,seed,wall_ms,macs,main_loads,main_stores,scratch_loads,"
         "scratch_stores,gflops,verified,comm_total";
}

std::string csv_row(const RunRecord& rec, CostModel model) {
  std::ostringstream os;
  os << quote(rec.spec) << ',' << to_string(rec.algo) << ',' << to_string(rec.dtype) << ','
     << rec.seed << ',';
  if (model == CostModel::Wall) os << std::fixed << std::setprecision(3) << rec.wall_ms;
  os << ',' << rec.counters.macs << ',' << rec.counters.main_loads << ','
     << rec.counters.main_stores << ',' << rec.counters.scratch_loads << ','
     << rec.counters.scratch_stores << ',';
  if (model == CostModel::Wall) os << std::fixed << std::setprecision(3) << rec.gflops;
  os << ',' << (rec.verified ? (*rec.verified ? "true" : "false") : "skipped") << ',';
  if (rec.comm_total) os << *rec.comm_total;
  return os.str();
}

std::vector<ProblemSpec> desk_suite() {
  struct Row {
    std::vector<std::size_t> ms;
    std::vector<std::pair<FactorShape, std::size_t>> runs;  // shape, count
  };
  const std::vector<Row> rows = {
      {{20}, {{{2, 2}, 7}}},
      {{20, 50}, {{{2, 2}, 9}}},
      {{20}, {{{2, 2}, 10}}},
      {{1}, {{{2, 2}, 11}}},
      {{10}, {{{52, 50}, 1}, {{65, 20}, 1}}},
      {{50}, {{{32, 8}, 1}, {{64, 128}, 1}}},
      {{10}, {{{52, 65}, 1}, {{50, 20}, 1}}},
      {{4, 8, 16, 20}, {{{2, 2}, 9}}},
      {{4, 8, 16, 20}, {{{8, 8}, 3}}},
      {{1024}, {{{3, 3}, 7}}},
      {{1024}, {{{4, 4}, 7}}},
      {{1024}, {{{6, 6}, 7}}},
      {{1}, {{{5, 5}, 3}, {{2, 2}, 1}}},
      {{1}, {{{5, 5}, 2}, {{2, 2}, 1}, {{25, 25}, 1}}},
      {{1526}, {{{4, 4}, 6}}},
      {{156}, {{{8, 8}, 3}}},
      {{2967}, {{{4, 4}, 7}}},
      {{16}, {{{8, 8}, 8}}},
      {{16}, {{{16, 16}, 6}}},
      {{16}, {{{32, 32}, 6}}},
      {{16}, {{{64, 64}, 3}}},
  };
  constexpr std::size_t kMaxK = std::size_t{1} << 16;
  std::vector<ProblemSpec> out;
  for (const auto& row : rows) {
    ProblemSpec base;
    for (const auto& [shape, count] : row.runs) base.shapes.insert(base.shapes.end(), count, shape);
    std::string note;
    // Only single-run rows are ever too wide; drop factors from that run.
    auto width = [&] {
      std::size_t k = 1;
      for (const auto& sh : base.shapes) k *= sh.p;
      return k;
    };
    while (width() > kMaxK) {
      if (note.empty()) {
        ProblemSpec orig = base;
        orig.m = 1;
        note = "reduced from " + orig.canonical().substr(std::string("-m 1 -f ").size());
      }
      base.shapes.pop_back();
    }
    for (std::size_t m : row.ms) {
      ProblemSpec s = base;
      s.m = m;
      s.note = note;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace kron
