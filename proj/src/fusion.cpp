#include "kron/fusion.hpp"

#include <algorithm>
#include <vector>

#include "kron/detail/parallel.hpp"

namespace kron {

namespace {

std::string num(std::size_t v) { return std::to_string(v); }

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

}  // namespace

std::size_t max_fused(std::size_t p, std::size_t tile_k) noexcept {
  if (p < 2) return 0;
  std::size_t f = 0;
  for (std::size_t pw = p; pw <= tile_k; pw *= p) {
    ++f;
    if (pw > tile_k / p) break;
  }
  return f;
}

FuseConfig FuseConfig::make(std::size_t fused, const TileConfig& base, std::size_t p,
                            std::size_t q, const FuseLimits& limits) {
  const std::string what = "fused=" + num(fused) + " with tile " + base.to_string() + ": ";
  if (fused == 0) throw ConfigError(what + "fused must be at least 1");
  if (p == 0 || q == 0 || base.tile_k == 0) throw ConfigError(what + "empty factor or tile");
  if (fused > 1) {
    const std::size_t bound = max_fused(p, base.tile_k);
    if (fused > bound) {
      throw ConfigError(what + "exceeds floor(log_" + num(p) + " tileK) = " + num(bound));
    }
    if (base.tile_k % ipow(p, fused) != 0) {
      throw ConfigError(what + "tileK is not a multiple of P^" + num(fused));
    }
    if (base.tile_p != p) throw ConfigError(what + "fusion needs tileP == P=" + num(p));
    if (base.tile_q != q) throw ConfigError(what + "fusion needs tileQ == Q=" + num(q));
    if (p > limits.max_p || q > limits.max_q) {
      throw ConfigError(what + "factor " + num(p) + "x" + num(q) + " is above the fusion limit " +
                        num(limits.max_p) + "x" + num(limits.max_q));
    }
  }
  return FuseConfig(fused, base, p, q);
}

namespace {

// Widest scratch row seen while applying `depth` factors to tileK columns.
std::size_t widest_row(std::size_t tile_k, std::size_t p, std::size_t q, std::size_t depth) {
  std::size_t widest = tile_k;
  for (std::size_t d = 0, w = tile_k; d < depth; ++d) {
    w = w / p * q;
    widest = std::max(widest, w);
  }
  return widest;
}

}  // namespace

std::size_t FuseConfig::scratch_scalars(std::size_t depth) const noexcept {
  return base_.tile_m * 2 * widest_row(base_.tile_k, p_, q_, depth) + p_ * q_;
}

std::optional<std::string> fused_sweep_violation(const Problem& problem, const FuseConfig& cfg,
                                                 std::size_t scratch_bytes,
                                                 std::size_t scalar_bytes) {
  const auto matches = [&](std::size_t f) {
    return problem.shapes[f].p == cfg.p() && problem.shapes[f].q == cfg.q();
  };
  const TileConfig& tile = cfg.base();
  std::size_t width = problem.k;
  for (std::size_t hi = problem.n(); hi > 0;) {
    std::size_t lo = hi - 1;
    if (matches(lo)) {
      while (lo > 0 && hi - lo < cfg.fused() && matches(lo - 1)) --lo;
    }
    const std::size_t group = hi - lo;
    const std::string where = "factors " + num(lo + 1) + ".." + num(hi) + ": ";
    if (group == 1) {
      if (matches(lo)) {
        if (auto v = tile_violation(tile, {problem.m, width, cfg.p(), cfg.q()}, scratch_bytes,
                                    scalar_bytes)) {
          return where + *v;
        }
      }
    } else {
      if (width % tile.tile_k != 0) {
        return where + "tileK=" + num(tile.tile_k) + " does not divide K=" + num(width);
      }
      if (cfg.scratch_scalars(group) * scalar_bytes > scratch_bytes) {
        return where + "fused scratch footprint exceeds budget " + num(scratch_bytes);
      }
    }
    width = width / ipow(problem.shapes[lo].p, group) * ipow(problem.shapes[lo].q, group);
    hi = lo;
  }
  return std::nullopt;
}

template <typename T>
void fused_pass_into(std::span<const T> in, std::span<T> out, std::size_t m, std::size_t k,
                     std::span<const Matrix<T>* const> factors, const FuseConfig& cfg,
                     OpCounters* counters, const ExecOptions& opts,
                     const std::type_identity_t<ScratchObserver<T>>& observer) {
  const std::size_t depth = factors.size();
  const std::size_t p = cfg.p();
  const std::size_t q = cfg.q();
  const TileConfig& tile = cfg.base();
  for (const Matrix<T>* f : factors) {
    if (f->rows() != p || f->cols() != q) {
      throw DimensionError("fused pass: factor " + num(f->rows()) + "x" + num(f->cols()) +
                           " does not match the configured " + num(p) + "x" + num(q));
    }
  }
  if (depth == 0 || depth > max_fused(p, tile.tile_k) || tile.tile_k % ipow(p, depth) != 0) {
    throw ConfigError("fused pass of " + num(depth) + " factors is invalid for tileK=" +
                      num(tile.tile_k) + ", P=" + num(p));
  }
  if (k % tile.tile_k != 0) {
    throw ConfigError("tileK=" + num(tile.tile_k) + " does not divide K=" + num(k));
  }
  const std::size_t bytes = cfg.scratch_scalars(depth) * sizeof(T);
  if (bytes > opts.scratch_bytes) {
    throw ConfigError("fused scratch footprint " + num(bytes) + " bytes exceeds budget " +
                      num(opts.scratch_bytes));
  }

  const std::size_t k_out = k / ipow(p, depth) * ipow(q, depth);
  const std::size_t m_blocks = (m + tile.tile_m - 1) / tile.tile_m;
  const std::size_t k_blocks = k / tile.tile_k;

  auto run_blocks = [&](std::size_t first, std::size_t last, OpCounters& tally) {
    const std::size_t widest = widest_row(tile.tile_k, p, q, depth);
    std::vector<T> cur(widest);
    std::vector<T> next(widest);
    std::vector<T> fs(p * q);
    for (std::size_t b = first; b < last; ++b) {
      const std::size_t mb = b / k_blocks;
      const std::size_t kb = b % k_blocks;
      const std::size_t row0 = mb * tile.tile_m;
      const std::size_t rows = std::min(tile.tile_m, m - row0);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* src = in.data() + (row0 + r) * k + kb * tile.tile_k;
        std::copy(src, src + tile.tile_k, cur.begin());
        tally.main_loads += tile.tile_k;
        tally.scratch_stores += tile.tile_k;

        std::size_t w = tile.tile_k;
        for (std::size_t d = 1; d <= depth; ++d) {
          const Matrix<T>& f = *factors[depth - d];
          std::copy(f.data().begin(), f.data().end(), fs.begin());
          const std::size_t slices = w / p;
          const std::size_t w_out = slices * q;
          for (std::size_t j = 0; j < w_out; ++j) {
            const T* x = cur.data() + (j % slices) * p;
            const std::size_t col = j / slices;
            T acc{0};
            for (std::size_t kk = 0; kk < p; ++kk) acc += x[kk] * fs[kk * q + col];
            next[j] = acc;
          }
          tally.scratch_stores += p * q;
          tally.scratch_loads += w_out * p + p * q;
          tally.macs += w_out * p;
          if (d < depth) tally.scratch_stores += w_out;
          std::swap(cur, next);
          w = w_out;
          if (observer) observer(row0 + r, kb, d, std::span<const T>(cur.data(), w));
        }

        T* dst = out.data() + (row0 + r) * k_out;
        for (std::size_t c = 0; c < w; ++c)
          dst[fused_store_index(c, kb, k, p, tile.tile_k, depth)] = cur[c];
        tally.main_stores += w;
      }
    }
  };

  OpCounters tally = detail::parallel_blocks(m_blocks * k_blocks, opts.threads, run_blocks);
  if (counters) *counters += tally;
}

template <typename T>
Matrix<T> fused_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain, const FuseConfig& cfg,
                           OpCounters* counters, const ExecOptions& opts,
                           const std::type_identity_t<ScratchObserver<T>>& observer) {
  check_input(x, chain);
  const Problem problem(x.rows(), chain.shapes());
  const std::size_t m = x.rows();
  std::vector<T> y1(m * problem.max_interm());
  std::vector<T> y2(m * problem.max_interm());
  std::copy(x.data().begin(), x.data().end(), y1.begin());

  auto matches = [&](std::size_t f) {
    return chain[f].rows() == cfg.p() && chain[f].cols() == cfg.q();
  };

  std::size_t width = problem.k;
  for (std::size_t hi = chain.n(); hi > 0;) {
    // Group is chain[lo, hi), applied from hi-1 down to lo.
    std::size_t lo = hi - 1;
    if (matches(lo)) {
      while (lo > 0 && hi - lo < cfg.fused() && matches(lo - 1)) --lo;
    }
    const std::size_t group = hi - lo;
    if (group == 1) {
      const Matrix<T>& fac = chain[lo];
      const SliceShape shape{m, width, fac.rows(), fac.cols()};
      TileConfig tile = cfg.base();
      if (!matches(lo)) {
        tile = default_tile_config(shape, opts.scratch_bytes, sizeof(T));
      } else if (auto v = tile_violation(tile, shape, opts.scratch_bytes, sizeof(T))) {
        throw ConfigError("factor " + num(lo + 1) + ": invalid tile config " + tile.to_string() +
                          ": " + *v);
      }
      tiled_sliced_multiply_into<T>(y1, y2, m, width, fac, tile, counters, opts);
      width = width / fac.rows() * fac.cols();
    } else {
      std::vector<const Matrix<T>*> group_factors;
      for (std::size_t i = lo; i < hi; ++i) group_factors.push_back(&chain[i]);
      try {
        fused_pass_into<T>(y1, y2, m, width, group_factors, cfg, counters, opts, observer);
      } catch (const ConfigError& e) {
        throw ConfigError("factors " + num(lo + 1) + ".." + num(hi) + ": " + e.what());
      }
      width = width / ipow(cfg.p(), group) * ipow(cfg.q(), group);
    }
    std::swap(y1, y2);
    hi = lo;
  }
  y1.resize(m * width);
  return Matrix<T>(m, width, std::move(y1));
}

#define KRON_INSTANTIATE(T)                                                                  \
  template void fused_pass_into(std::span<const T>, std::span<T>, std::size_t, std::size_t,  \
                                std::span<const Matrix<T>* const>, const FuseConfig&,        \
                                OpCounters*, const ExecOptions&,                             \
                                const std::type_identity_t<ScratchObserver<T>>&);            \
  template Matrix<T> fused_kronmatmul(const Matrix<T>&, const FactorChain<T>&,               \
                                      const FuseConfig&, OpCounters*, const ExecOptions&,    \
                                      const std::type_identity_t<ScratchObserver<T>>&);

KRON_INSTANTIATE(float)
KRON_INSTANTIATE(double)
#undef KRON_INSTANTIATE

}  // namespace kron
