#include "kron/sliced.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <thread>
#include <vector>

#include "kron/detail/parallel.hpp"

namespace kron {

std::string TileConfig::to_string() const {
  std::ostringstream os;
  os << tile_m << ',' << tile_k << ',' << tile_p << ',' << tile_q << ',' << reg_k << ','
     << reg_p << ',' << reg_q;
  return os.str();
}

TileConfig TileConfig::parse(const std::string& text) {
  std::size_t values[7];
  std::size_t field = 0;
  const char* cur = text.data();
  const char* end = text.data() + text.size();
  while (field < 7) {
    auto [ptr, ec] = std::from_chars(cur, end, values[field]);
    if (ec != std::errc{} || ptr == cur) break;
    ++field;
    cur = ptr;
    if (field < 7) {
      if (cur == end || *cur != ',') break;
      ++cur;
    }
  }
  if (field != 7 || cur != end) {
    throw ConfigError("tile config '" + text +
                      "' must be seven integers tileM,tileK,tileP,tileQ,regK,regP,regQ");
  }
  return {values[0], values[1], values[2], values[3], values[4], values[5], values[6]};
}

std::optional<std::string> tile_violation(const TileConfig& c, const SliceShape& s,
                                          std::size_t scratch_bytes, std::size_t scalar_bytes) {
  auto num = [](std::size_t v) { return std::to_string(v); };
  if (c.tile_m == 0 || c.tile_k == 0 || c.tile_p == 0 || c.tile_q == 0 || c.reg_k == 0 ||
      c.reg_p == 0 || c.reg_q == 0) {
    return "all tile extents must be at least 1";
  }
  if (c.tile_k % s.p != 0) return "tileK=" + num(c.tile_k) + " is not a multiple of P=" + num(s.p);
  if (s.k % c.tile_k != 0) return "tileK=" + num(c.tile_k) + " does not divide K=" + num(s.k);
  if (s.p % c.tile_p != 0) return "tileP=" + num(c.tile_p) + " does not divide P=" + num(s.p);
  if (s.q % c.tile_q != 0) return "tileQ=" + num(c.tile_q) + " does not divide Q=" + num(s.q);
  if (c.tile_p % c.reg_p != 0) {
    return "regP=" + num(c.reg_p) + " does not divide tileP=" + num(c.tile_p);
  }
  if (c.tile_q % c.reg_q != 0) {
    return "regQ=" + num(c.reg_q) + " does not divide tileQ=" + num(c.tile_q);
  }
  if ((c.tile_k / s.p) % c.reg_k != 0) {
    return "regK=" + num(c.reg_k) + " does not divide tileK/P=" + num(c.tile_k / s.p);
  }
  const std::size_t bytes = c.scratch_scalars(s.p) * scalar_bytes;
  if (bytes > scratch_bytes) {
    return "scratch footprint " + num(bytes) + " bytes exceeds budget " + num(scratch_bytes);
  }
  return std::nullopt;
}

void validate_tile(const TileConfig& cfg, const SliceShape& shape, std::size_t scratch_bytes,
                   std::size_t scalar_bytes) {
  if (auto v = tile_violation(cfg, shape, scratch_bytes, scalar_bytes)) {
    throw ConfigError("invalid tile config " + cfg.to_string() + ": " + *v);
  }
}

namespace {

std::vector<std::size_t> divisors_desc(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t d = n; d >= 1; --d)
    if (n % d == 0) out.push_back(d);
  return out;
}

std::size_t largest_divisor_at_most(std::size_t n, std::size_t cap) {
  for (std::size_t d = std::min(n, cap); d > 1; --d)
    if (n % d == 0) return d;
  return 1;
}

}  // namespace

TileConfig default_tile_config(const SliceShape& s, std::size_t scratch_bytes,
                               std::size_t scalar_bytes) {
  std::size_t m_cap = 1;
  while (m_cap * 2 <= std::min<std::size_t>(s.m, 16)) m_cap *= 2;
  for (std::size_t tq : divisors_desc(s.q)) {
    for (std::size_t tp : divisors_desc(s.p)) {
      for (std::size_t slices : divisors_desc(s.k / s.p)) {
        const std::size_t tk = slices * s.p;
        for (std::size_t tm = m_cap; tm >= 1; tm /= 2) {
          TileConfig c{tm, tk, tp, tq, largest_divisor_at_most(slices, 4),
                       largest_divisor_at_most(tp, 8), largest_divisor_at_most(tq, 4)};
          if (!tile_violation(c, s, scratch_bytes, scalar_bytes)) return c;
        }
      }
    }
  }
  throw ConfigError("no tile config fits a scratch budget of " + std::to_string(scratch_bytes) +
                    " bytes for P=" + std::to_string(s.p) + ", Q=" + std::to_string(s.q));
}

std::size_t tile_output_column(std::size_t local_col, std::size_t local_slice,
                               std::size_t k_block, std::size_t q_block, const TileConfig& cfg,
                               const SliceShape& shape) {
  const std::size_t block_slices = cfg.tile_k / shape.p;
  const std::size_t all_slices = shape.k / shape.p;
  // Tile-local position, then rescaled: the column group strides by K/P
  // globally and by tileK/P inside the tile.
  const std::size_t local = local_col * block_slices + local_slice;
  return (local / block_slices + q_block * cfg.tile_q) * all_slices + k_block * block_slices +
         local % block_slices;
}

template <typename T>
void sliced_multiply_into(std::span<const T> in, std::span<T> out, std::size_t m, std::size_t k,
                          const Matrix<T>& f, OpCounters* counters) {
  const std::size_t p = f.rows();
  const std::size_t q = f.cols();
  if (k % p != 0) {
    throw DimensionError("sliced multiply: K=" + std::to_string(k) +
                         " is not divisible by P=" + std::to_string(p));
  }
  const std::size_t slices = k / p;
  const std::size_t l = slices * q;
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = in.data() + i * k;
    T* dst = out.data() + i * l;
    for (std::size_t j = 0; j < l; ++j) {
      const std::size_t slice = j % slices;
      const std::size_t col = j / slices;
      const T* x = row + slice * p;
      T acc{0};
      for (std::size_t kk = 0; kk < p; ++kk) acc += x[kk] * f(kk, col);
      dst[j] = acc;
    }
  }
  if (counters) {
    const std::uint64_t outs = static_cast<std::uint64_t>(m) * l;
    counters->macs += outs * p;
    counters->main_loads += outs * p;
    counters->main_stores += outs;
  }
}

template <typename T>
Matrix<T> sliced_multiply(const Matrix<T>& y_in, const Matrix<T>& f, OpCounters* counters) {
  if (y_in.cols() % f.rows() != 0) {
    throw DimensionError("sliced multiply: K=" + std::to_string(y_in.cols()) +
                         " is not divisible by P=" + std::to_string(f.rows()));
  }
  Matrix<T> out(y_in.rows(), y_in.cols() / f.rows() * f.cols());
  sliced_multiply_into<T>(y_in.data(), out.data(), y_in.rows(), y_in.cols(), f, counters);
  return out;
}

namespace {

// acc[i] (i over rows · reg_k register rows) += xr row i times the reg_p ×
// reg_q register tile, one column sum per output, p in increasing order.
template <typename T, std::size_t RQ>
void micro_kernel_fixed(std::size_t lines, std::size_t reg_k, std::size_t reg_p, const T* xr,
                        const T* fr, T* acc, std::size_t row_stride, std::size_t slice_stride) {
  for (std::size_t i = 0; i < lines; ++i) {
    T* out = acc + (i / reg_k) * row_stride + (i % reg_k) * slice_stride;
    const T* x = xr + i * reg_p;
    T sum[RQ];
    for (std::size_t qq = 0; qq < RQ; ++qq) sum[qq] = out[qq];
    for (std::size_t pp = 0; pp < reg_p; ++pp)
      for (std::size_t qq = 0; qq < RQ; ++qq) sum[qq] += x[pp] * fr[pp * RQ + qq];
    for (std::size_t qq = 0; qq < RQ; ++qq) out[qq] = sum[qq];
  }
}

template <typename T>
void micro_kernel(std::size_t reg_q, std::size_t lines, std::size_t reg_k, std::size_t reg_p,
                  const T* xr, const T* fr, T* acc, std::size_t row_stride,
                  std::size_t slice_stride) {
  switch (reg_q) {
    case 1:
      return micro_kernel_fixed<T, 1>(lines, reg_k, reg_p, xr, fr, acc, row_stride,
                                        slice_stride);
    case 2:
      return micro_kernel_fixed<T, 2>(lines, reg_k, reg_p, xr, fr, acc, row_stride,
                                        slice_stride);
    case 4:
      return micro_kernel_fixed<T, 4>(lines, reg_k, reg_p, xr, fr, acc, row_stride,
                                        slice_stride);
    case 8:
      return micro_kernel_fixed<T, 8>(lines, reg_k, reg_p, xr, fr, acc, row_stride,
                                        slice_stride);
    case 16:
      return micro_kernel_fixed<T, 16>(lines, reg_k, reg_p, xr, fr, acc, row_stride,
                                        slice_stride);
    default: break;
  }
  for (std::size_t i = 0; i < lines; ++i) {
    T* out = acc + (i / reg_k) * row_stride + (i % reg_k) * slice_stride;
    const T* x = xr + i * reg_p;
    for (std::size_t qq = 0; qq < reg_q; ++qq) {
      T a = out[qq];
      for (std::size_t pp = 0; pp < reg_p; ++pp) a += x[pp] * fr[pp * reg_q + qq];
      out[qq] = a;
    }
  }
}

}  // namespace

template <typename T>
void tiled_sliced_multiply_into(std::span<const T> in, std::span<T> out, std::size_t m,
                                std::size_t k, const Matrix<T>& f, const TileConfig& cfg,
                                OpCounters* counters, const ExecOptions& opts) {
  const SliceShape shape{m, k, f.rows(), f.cols()};
  if (k % shape.p != 0) {
    throw DimensionError("sliced multiply: K=" + std::to_string(k) +
                         " is not divisible by P=" + std::to_string(shape.p));
  }
  validate_tile(cfg, shape, opts.scratch_bytes, sizeof(T));

  const std::size_t p = shape.p;
  const std::size_t l = k / p * shape.q;
  const std::size_t block_slices = cfg.tile_k / p;
  const std::size_t ks = block_slices * cfg.tile_p;  // staged scalars per row
  const std::size_t m_blocks = (m + cfg.tile_m - 1) / cfg.tile_m;
  const std::size_t k_blocks = k / cfg.tile_k;
  const std::size_t q_blocks = shape.q / cfg.tile_q;
  const std::size_t total_blocks = m_blocks * k_blocks * q_blocks;

  auto run_blocks = [&](std::size_t first, std::size_t last, OpCounters& tally) {
    std::vector<T> xs(cfg.tile_m * ks);
    std::vector<T> fs(cfg.tile_p * cfg.tile_q);
    std::vector<T> acc(cfg.tile_m * block_slices * cfg.tile_q);
    std::vector<T> xr(cfg.tile_m * cfg.reg_k * cfg.reg_p);
    std::vector<T> fr(cfg.reg_p * cfg.reg_q);

    for (std::size_t b = first; b < last; ++b) {
      const std::size_t mb = b / (k_blocks * q_blocks);
      const std::size_t kb = (b / q_blocks) % k_blocks;
      const std::size_t qb = b % q_blocks;
      const std::size_t row0 = mb * cfg.tile_m;
      const std::size_t rows = std::min(cfg.tile_m, m - row0);
      std::fill(acc.begin(), acc.end(), T{0});

      for (std::size_t tp = 0; tp < p; tp += cfg.tile_p) {
        // Stage tileP elements of every slice of the block, shift-cached.
        for (std::size_t r = 0; r < rows; ++r) {
          const T* src = in.data() + (row0 + r) * k + kb * cfg.tile_k + tp;
          T* dst = xs.data() + r * ks;
          // Same placement as shift_store_index, walked slice by slice.
          for (std::size_t slice = 0; slice < block_slices; ++slice) {
            const T* sp = src + slice * p;
            T* dp = dst + slice * cfg.tile_p;
            std::size_t pos = (slice / cfg.reg_k) % cfg.tile_p;
            for (std::size_t e = 0; e < cfg.tile_p; ++e) {
              dp[pos] = sp[e];
              if (++pos == cfg.tile_p) pos = 0;
            }
          }
        }
        for (std::size_t pp = 0; pp < cfg.tile_p; ++pp)
          for (std::size_t qq = 0; qq < cfg.tile_q; ++qq)
            fs[pp * cfg.tile_q + qq] = f(tp + pp, qb * cfg.tile_q + qq);
        tally.main_loads += rows * ks;
        tally.scratch_stores += rows * ks + cfg.tile_p * cfg.tile_q;

        for (std::size_t rp = 0; rp < cfg.tile_p; rp += cfg.reg_p) {
          for (std::size_t yk = 0; yk < block_slices; yk += cfg.reg_k) {
            for (std::size_t yq = 0; yq < cfg.tile_q; yq += cfg.reg_q) {
              for (std::size_t s = 0; s < cfg.reg_k; ++s) {
                const std::size_t slice = yk + s;
                const std::size_t start = shift_load_index(slice, rp, cfg.tile_p, cfg.reg_k);
                const std::size_t seg = slice * cfg.tile_p;
                for (std::size_t r = 0; r < rows; ++r) {
                  const T* xrow = xs.data() + r * ks;
                  T* out_r = xr.data() + (r * cfg.reg_k + s) * cfg.reg_p;
                  std::size_t pos = start;
                  for (std::size_t pp = 0; pp < cfg.reg_p; ++pp) {
                    out_r[pp] = xrow[pos];
                    if (++pos == seg + cfg.tile_p) pos = seg;
                  }
                }
              }
              for (std::size_t pp = 0; pp < cfg.reg_p; ++pp)
                for (std::size_t qq = 0; qq < cfg.reg_q; ++qq)
                  fr[pp * cfg.reg_q + qq] = fs[(rp + pp) * cfg.tile_q + yq + qq];

              micro_kernel<T>(cfg.reg_q, rows * cfg.reg_k, cfg.reg_k, cfg.reg_p, xr.data(),
                              fr.data(), acc.data() + yk * cfg.tile_q + yq,
                              block_slices * cfg.tile_q, cfg.tile_q);
              tally.scratch_loads += rows * cfg.reg_k * cfg.reg_p + cfg.reg_p * cfg.reg_q;
              tally.macs += rows * cfg.reg_k * cfg.reg_q * cfg.reg_p;
            }
          }
        }
      }

      for (std::size_t r = 0; r < rows; ++r) {
        T* dst = out.data() + (row0 + r) * l;
        for (std::size_t qq = 0; qq < cfg.tile_q; ++qq) {
          T* run = dst + tile_output_column(qq, 0, kb, qb, cfg, shape);
          for (std::size_t s = 0; s < block_slices; ++s)
            run[s] = acc[(r * block_slices + s) * cfg.tile_q + qq];
        }
      }
      tally.main_stores += rows * block_slices * cfg.tile_q;
    }
  };

  OpCounters tally = detail::parallel_blocks(total_blocks, opts.threads, run_blocks);
  if (counters) *counters += tally;
}

template <typename T>
Matrix<T> tiled_sliced_multiply(const Matrix<T>& y_in, const Matrix<T>& f, const TileConfig& cfg,
                                OpCounters* counters, const ExecOptions& opts) {
  if (y_in.cols() % f.rows() != 0) {
    throw DimensionError("sliced multiply: K=" + std::to_string(y_in.cols()) +
                         " is not divisible by P=" + std::to_string(f.rows()));
  }
  Matrix<T> out(y_in.rows(), y_in.cols() / f.rows() * f.cols());
  tiled_sliced_multiply_into<T>(y_in.data(), out.data(), y_in.rows(), y_in.cols(), f, cfg,
                                counters, opts);
  return out;
}

template <typename T>
Matrix<T> sliced_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                            const TilePolicy& policy, OpCounters* counters,
                            const ExecOptions& opts, const std::type_identity_t<StepObserver<T>>& observer) {
  check_input(x, chain);
  const Problem problem(x.rows(), chain.shapes());
  const std::size_t m = x.rows();
  std::vector<T> y1(m * problem.max_interm());
  std::vector<T> y2(m * problem.max_interm());
  std::copy(x.data().begin(), x.data().end(), y1.begin());

  std::size_t width = problem.k;
  for (std::size_t f = chain.n(); f-- > 0;) {
    const Matrix<T>& fac = chain[f];
    if (width % fac.rows() != 0) {
      throw DimensionError("factor " + std::to_string(f + 1) + ": width " +
                           std::to_string(width) + " not divisible by P=" +
                           std::to_string(fac.rows()));
    }
    const SliceShape shape{m, width, fac.rows(), fac.cols()};
    switch (policy.kind) {
      case TilePolicy::Kind::Untiled:
        sliced_multiply_into<T>(y1, y2, m, width, fac, counters);
        break;
      case TilePolicy::Kind::Fixed:
        if (auto v = tile_violation(policy.config, shape, opts.scratch_bytes, sizeof(T))) {
          throw ConfigError("factor " + std::to_string(f + 1) + ": invalid tile config " +
                            policy.config.to_string() + ": " + *v);
        }
        tiled_sliced_multiply_into<T>(y1, y2, m, width, fac, policy.config, counters, opts);
        break;
      case TilePolicy::Kind::Auto:
        tiled_sliced_multiply_into<T>(y1, y2, m, width, fac,
                                      default_tile_config(shape, opts.scratch_bytes, sizeof(T)),
                                      counters, opts);
        break;
    }
    width = width / fac.rows() * fac.cols();
    std::swap(y1, y2);
    if (observer) {
      observer(f, Matrix<T>(m, width, std::vector<T>(y1.begin(), y1.begin() + m * width)));
    }
  }
  y1.resize(m * width);
  return Matrix<T>(m, width, std::move(y1));
}

#define KRON_INSTANTIATE(T)                                                                    \
  template void sliced_multiply_into(std::span<const T>, std::span<T>, std::size_t,            \
                                     std::size_t, const Matrix<T>&, OpCounters*);              \
  template Matrix<T> sliced_multiply(const Matrix<T>&, const Matrix<T>&, OpCounters*);         \
  template void tiled_sliced_multiply_into(std::span<const T>, std::span<T>, std::size_t,      \
                                           std::size_t, const Matrix<T>&, const TileConfig&,   \
                                           OpCounters*, const ExecOptions&);                   \
  template Matrix<T> tiled_sliced_multiply(const Matrix<T>&, const Matrix<T>&,                 \
                                           const TileConfig&, OpCounters*, const ExecOptions&); \
  template Matrix<T> sliced_kronmatmul(const Matrix<T>&, const FactorChain<T>&,                \
                                       const TilePolicy&, OpCounters*, const ExecOptions&,     \
                                       const std::type_identity_t<StepObserver<T>>&);

KRON_INSTANTIATE(float)
KRON_INSTANTIATE(double)
#undef KRON_INSTANTIATE

}  // namespace kron
