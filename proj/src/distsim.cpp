#include "kron/distsim.hpp"

#include <algorithm>
#include <barrier>
#include <charconv>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "kron/fusion.hpp"
#include "kron/sliced.hpp"

namespace kron {

namespace {

std::string num(std::size_t v) { return std::to_string(v); }

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

std::size_t bit_floor_log2(std::size_t v) {
  std::size_t e = 0;
  while (v >>= 1) ++e;
  return e;
}

std::size_t isqrt(std::size_t v) {
  std::size_t r = 0;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

}  // namespace

std::string ProcGrid::to_string() const { return num(gm) + "x" + num(gk); }

ProcGrid ProcGrid::parse(const std::string& text) {
  ProcGrid g;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [p1, e1] = std::from_chars(begin, end, g.gm);
  if (e1 != std::errc{} || p1 == begin) throw ParseError("expected grid GMxGK", 0);
  if (p1 == end || *p1 != 'x') throw ParseError("expected 'x' in grid", p1 - begin);
  auto [p2, e2] = std::from_chars(p1 + 1, end, g.gk);
  if (e2 != std::errc{} || p2 == p1 + 1) throw ParseError("expected GK", p1 + 1 - begin);
  if (p2 != end) throw ParseError("trailing characters in grid", p2 - begin);
  if (g.gm == 0 || g.gk == 0) throw ParseError("grid extents must be positive", 0);
  return g;
}

ProcGrid select_grid(std::size_t g) {
  if (g == 0) throw ConfigError("worker count must be at least 1");
  const std::size_t s = isqrt(g);
  if (s * s == g) return {s, s};
  // log2 sqrt g lies strictly between two integers or is a half-integer.
  const std::size_t e = bit_floor_log2(g);
  const bool pow2 = (g & (g - 1)) == 0;
  const std::size_t lo = e / 2;
  const std::size_t hi = pow2 ? (e + 1) / 2 : lo + 1;
  const ProcGrid grid{std::size_t{1} << hi, std::size_t{1} << lo};
  if (grid.total() != g) {
    throw CapacityError("cannot arrange " + num(g) + " workers: the power-of-two grid " +
                        grid.to_string() + " has " + num(grid.total()));
  }
  return grid;
}

DistPlan DistPlan::make(std::size_t m, const std::vector<FactorShape>& shapes, ProcGrid grid,
                        std::size_t local) {
  if (shapes.empty()) throw ConfigError("distributed plan needs at least one factor");
  if (grid.gm == 0 || grid.gk == 0) throw ConfigError("grid extents must be positive");
  for (const auto& s : shapes) {
    if (!(s == shapes.front())) {
      throw ConfigError("distributed plan needs every factor to share one shape");
    }
  }
  DistPlan plan;
  plan.grid_ = grid;
  plan.m_ = m;
  plan.p_ = shapes.front().p;
  plan.q_ = shapes.front().q;
  plan.n_ = shapes.size();
  if (plan.p_ < 2) throw ConfigError("distributed plan needs P >= 2");
  if (m % grid.gm != 0) {
    throw ConfigError("GM=" + num(grid.gm) + " does not divide M=" + num(m));
  }
  const Problem problem(m, shapes);
  std::size_t k = problem.k;
  for (std::size_t remaining = plan.n_; remaining > 0;) {
    const std::size_t r = plan.rounds_.size();
    if (k % grid.gk != 0) {
      throw ConfigError("round " + num(r) + ": GK=" + num(grid.gk) + " does not divide K=" +
                        num(k));
    }
    const std::size_t g_tile_k = k / grid.gk;
    const std::size_t bound = max_fused(plan.p_, g_tile_k);
    std::size_t l = local;
    if (l == 0) {
      l = std::min(bound, remaining);
      while (l > 0 && g_tile_k % ipow(plan.p_, l) != 0) --l;
      if (l == 0) {
        throw ConfigError("round " + num(r) + ": gTileK=" + num(g_tile_k) +
                          " holds no complete slice of P=" + num(plan.p_));
      }
    } else {
      if (l > bound) {
        throw ConfigError("local=" + num(l) + " exceeds floor(log_" + num(plan.p_) + " gTileK=" +
                          num(g_tile_k) + ") = " + num(bound));
      }
      l = std::min(l, remaining);
      if (g_tile_k % ipow(plan.p_, l) != 0) {
        throw ConfigError("round " + num(r) + ": gTileK=" + num(g_tile_k) +
                          " is not a multiple of P^" + num(l));
      }
    }
    const std::size_t k_out = k / ipow(plan.p_, l) * ipow(plan.q_, l);
    if (k_out % grid.gk != 0) {
      throw ConfigError("round " + num(r) + ": GK=" + num(grid.gk) + " does not divide K=" +
                        num(k_out) + " after the round");
    }
    plan.rounds_.push_back({remaining - 1, l, k, k_out, g_tile_k, k_out / grid.gk});
    remaining -= l;
    k = k_out;
  }
  return plan;
}

void CommLedger::record(std::size_t round, WorkerId src, WorkerId dst, std::uint64_t scalars) {
  if (src == dst) return;
  if (rounds_.size() <= round) rounds_.resize(round + 1);
  rounds_[round][{src, dst}] += scalars;
}

std::uint64_t CommLedger::total_sent() const {
  std::uint64_t t = 0;
  for (const auto& r : rounds_)
    for (const auto& [pair, n] : r) t += n;
  return t;
}

std::uint64_t CommLedger::cross_row_scalars() const {
  std::uint64_t t = 0;
  for (const auto& r : rounds_)
    for (const auto& [pair, n] : r)
      if (pair.first.gm != pair.second.gm) t += n;
  return t;
}

std::uint64_t CommLedger::messages() const {
  std::uint64_t t = 0;
  for (const auto& r : rounds_) t += r.size();
  return t;
}

std::string CommLedger::trace_csv() const {
  std::ostringstream os;
  os << "round,src_gm,src_gk,dst_gm,dst_gk,scalars\n";
  for (std::size_t r = 0; r < rounds_.size(); ++r)
    for (const auto& [pair, n] : rounds_[r])
      os << r << ',' << pair.first.gm << ',' << pair.first.gk << ',' << pair.second.gm << ','
         << pair.second.gk << ',' << n << '\n';
  return os.str();
}

std::size_t relocated_column(const DistPlan& plan, std::size_t r, std::size_t src_gk,
                             std::size_t c) {
  const auto& g = plan.round(r);
  return fused_store_index(c, src_gk, g.k_in, plan.p(), g.g_tile_k_in, g.local);
}

std::vector<std::vector<std::size_t>> relocation_parts(const DistPlan& plan, std::size_t r,
                                                       std::size_t src_gk) {
  const auto& g = plan.round(r);
  std::vector<std::vector<std::size_t>> parts(plan.grid().gk);
  for (std::size_t c = 0; c < g.g_tile_k_out; ++c)
    parts[relocated_column(plan, r, src_gk, c) / g.g_tile_k_out].push_back(c);
  return parts;
}

std::uint64_t comm_volume(const DistPlan& plan) {
  std::uint64_t total = 0;
  for (std::size_t r = 0; r < plan.rounds(); ++r) {
    const auto& g = plan.round(r);
    total += static_cast<std::uint64_t>(plan.grid().gm) * plan.g_tile_m() *
             (g.k_out - g.g_tile_k_out);
  }
  return total;
}

std::optional<std::uint64_t> closed_form_comm_volume(const DistPlan& plan) {
  const std::size_t gtk = plan.g_tile_k();
  const std::size_t l = plan.local();
  if (plan.p() != plan.q() || ipow(plan.p(), l) != gtk || plan.n() % l != 0) return std::nullopt;
  return static_cast<std::uint64_t>(plan.grid().gm) *
         (plan.n() * plan.g_tile_m() * (plan.k() - gtk) / l);
}

template <typename T>
void store_gpu_tile(std::span<const T> part, std::size_t src_gk, std::size_t dst_gk,
                    const DistPlan& plan, std::size_t r, Matrix<T>& dst_block) {
  const auto& g = plan.round(r);
  const auto cols = relocation_parts(plan, r, src_gk)[dst_gk];
  const std::size_t rows = plan.g_tile_m();
  if (part.size() != rows * cols.size() || dst_block.rows() != rows ||
      dst_block.cols() != g.g_tile_k_out) {
    throw ProtocolError("round " + num(r) + ": part from gk=" + num(src_gk) + " to gk=" +
                        num(dst_gk) + " has " + num(part.size()) + " scalars, expected " +
                        num(rows * cols.size()));
  }
  const std::size_t offset = dst_gk * g.g_tile_k_out;
  for (std::size_t row = 0; row < rows; ++row)
    for (std::size_t i = 0; i < cols.size(); ++i)
      dst_block(row, relocated_column(plan, r, src_gk, cols[i]) - offset) =
          part[row * cols.size() + i];
}

namespace {

template <typename T>
struct Message {
  std::size_t round = 0;
  WorkerId src;
  std::vector<T> data;
};

template <typename T>
class Worker {
 public:
  enum class Phase { Compute, Relocate, Done };

  Worker(WorkerId id, Matrix<T> block) : id_(id), block_(std::move(block)), next_(1, 1) {}

  WorkerId id() const noexcept { return id_; }
  Phase phase() const noexcept { return phase_; }
  const Matrix<T>& block() const noexcept { return block_; }
  const OpCounters& counters() const noexcept { return counters_; }

  void deliver(Message<T> msg) {
    std::lock_guard lock(inbox_mutex_);
    inbox_.push_back(std::move(msg));
  }

  // Local multiplies of round r, then sends every non-local part.
  template <typename Send>
  void compute_and_send(const DistPlan& plan, const FactorChain<T>& chain, std::size_t r,
                        Send&& send) {
    if (phase_ != Phase::Compute) throw ProtocolError("worker asked to compute out of turn");
    const auto& g = plan.round(r);
    for (std::size_t i = 0; i < g.local; ++i)
      block_ = sliced_multiply(block_, chain[g.first_factor - i], &counters_);

    next_ = Matrix<T>(plan.g_tile_m(), g.g_tile_k_out);
    const auto parts = relocation_parts(plan, r, id_.gk);
    for (std::size_t dst = 0; dst < parts.size(); ++dst) {
      const auto& cols = parts[dst];
      if (cols.empty()) continue;
      std::vector<T> data(block_.rows() * cols.size());
      for (std::size_t row = 0; row < block_.rows(); ++row)
        for (std::size_t i = 0; i < cols.size(); ++i)
          data[row * cols.size() + i] = block_(row, cols[i]);
      if (dst == id_.gk) {
        store_gpu_tile<T>(data, id_.gk, dst, plan, r, next_);
      } else {
        send(WorkerId{id_.gm, dst}, Message<T>{r, id_, std::move(data)});
      }
    }
    phase_ = Phase::Relocate;
  }

  void receive(const DistPlan& plan, std::size_t r) {
    if (phase_ != Phase::Relocate) throw ProtocolError("worker asked to receive out of turn");
    std::sort(inbox_.begin(), inbox_.end(),
              [](const Message<T>& a, const Message<T>& b) { return a.src < b.src; });
    for (const auto& msg : inbox_) {
      if (msg.round != r || msg.src.gm != id_.gm) {
        throw ProtocolError("worker (" + num(id_.gm) + "," + num(id_.gk) +
                            ") got an unexpected message from (" + num(msg.src.gm) + "," +
                            num(msg.src.gk) + ")");
      }
      store_gpu_tile<T>(msg.data, msg.src.gk, id_.gk, plan, r, next_);
    }
    inbox_.clear();
    std::swap(block_, next_);
    phase_ = r + 1 == plan.rounds() ? Phase::Done : Phase::Compute;
  }

 private:
  WorkerId id_;
  Phase phase_ = Phase::Compute;
  Matrix<T> block_;
  Matrix<T> next_;
  OpCounters counters_;
  std::mutex inbox_mutex_;
  std::vector<Message<T>> inbox_;
};

template <typename T>
Matrix<T> gather(const std::vector<std::unique_ptr<Worker<T>>>& workers, const DistPlan& plan,
                 std::size_t width) {
  Matrix<T> y(plan.m(), width);
  const std::size_t tile_m = plan.g_tile_m();
  const std::size_t tile_k = width / plan.grid().gk;
  for (const auto& w : workers) {
    const auto& b = w->block();
    for (std::size_t row = 0; row < tile_m; ++row)
      for (std::size_t c = 0; c < tile_k; ++c)
        y(w->id().gm * tile_m + row, w->id().gk * tile_k + c) = b(row, c);
  }
  return y;
}

}  // namespace

template <typename T>
DistResult<T> dist_kronmatmul(const Matrix<T>& x, const FactorChain<T>& chain,
                              const DistPlan& plan, const DistOptions& opts,
                              const std::type_identity_t<RoundObserver<T>>& observer) {
  check_input(x, chain);
  if (x.rows() != plan.m() || chain.n() != plan.n() || chain[0].rows() != plan.p() ||
      chain[0].cols() != plan.q()) {
    throw DimensionError("problem does not match the distributed plan");
  }
  const ProcGrid grid = plan.grid();
  const std::size_t tile_m = plan.g_tile_m();
  const std::size_t tile_k = plan.g_tile_k();

  std::vector<std::unique_ptr<Worker<T>>> workers;
  for (std::size_t gm = 0; gm < grid.gm; ++gm)
    for (std::size_t gk = 0; gk < grid.gk; ++gk) {
      Matrix<T> block(tile_m, tile_k);
      for (std::size_t row = 0; row < tile_m; ++row)
        for (std::size_t c = 0; c < tile_k; ++c)
          block(row, c) = x(gm * tile_m + row, gk * tile_k + c);
      workers.push_back(std::make_unique<Worker<T>>(WorkerId{gm, gk}, std::move(block)));
    }

  CommLedger ledger;
  std::mutex ledger_mutex;
  auto send = [&](std::size_t r) {
    return [&, r](WorkerId dst, Message<T> msg) {
      {
        std::lock_guard lock(ledger_mutex);
        ledger.record(r, msg.src, dst, msg.data.size());
      }
      workers[dst.gm * grid.gk + dst.gk]->deliver(std::move(msg));
    };
  };

  if (!opts.threaded || workers.size() == 1) {
    for (std::size_t r = 0; r < plan.rounds(); ++r) {
      for (auto& w : workers) w->compute_and_send(plan, chain, r, send(r));
      for (auto& w : workers) w->receive(plan, r);
      if (observer) observer(r, gather(workers, plan, plan.round(r).k_out));
    }
  } else {
    std::size_t round = 0;
    std::exception_ptr observer_error;
    auto on_round_end = [&]() noexcept {
      if (observer && !observer_error) {
        try {
          observer(round, gather(workers, plan, plan.round(round).k_out));
        } catch (...) {
          observer_error = std::current_exception();
        }
      }
      ++round;
    };
    std::barrier sent(static_cast<std::ptrdiff_t>(workers.size()));
    std::barrier received(static_cast<std::ptrdiff_t>(workers.size()), on_round_end);
    std::vector<std::exception_ptr> errors(workers.size());
    auto run = [&](std::size_t i) {
      for (std::size_t r = 0; r < plan.rounds(); ++r) {
        if (!errors[i]) {
          try {
            workers[i]->compute_and_send(plan, chain, r, send(r));
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
        sent.arrive_and_wait();
        if (!errors[i]) {
          try {
            workers[i]->receive(plan, r);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
        received.arrive_and_wait();
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < workers.size(); ++i) pool.emplace_back(run, i);
    run(0);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    if (observer_error) std::rethrow_exception(observer_error);
  }

  DistResult<T> result{gather(workers, plan, plan.round(plan.rounds() - 1).k_out),
                       std::move(ledger), {}};
  for (const auto& w : workers) result.counters += w->counters();
  return result;
}

Scenario Scenario::parse(const std::string& line) {
  std::vector<std::pair<std::string, std::size_t>> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.emplace_back(line.substr(start, i - start), start);
      start = i + 1;
    }
  }
  if (fields.size() != 9) {
    throw ParseError("scenario needs 9 fields m,p,q,n,gm,gk,local,dtype,seed, got " +
                         num(fields.size()),
                     line.size());
  }
  auto unsigned_at = [&](std::size_t i) -> std::uint64_t {
    const auto& [text, pos] = fields[i];
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
      throw ParseError("expected an unsigned integer, got '" + text + "'", pos);
    }
    return v;
  };
  Scenario s;
  s.m = unsigned_at(0);
  s.p = unsigned_at(1);
  s.q = unsigned_at(2);
  s.n = unsigned_at(3);
  s.grid = {unsigned_at(4), unsigned_at(5)};
  s.local = unsigned_at(6);
  try {
    s.dtype = parse_dtype(fields[7].first);
  } catch (const Error&) {
    throw ParseError("unknown dtype '" + fields[7].first + "'", fields[7].second);
  }
  s.seed = unsigned_at(8);
  return s;
}

std::string Scenario::to_string() const {
  std::ostringstream os;
  os << m << ',' << p << ',' << q << ',' << n << ',' << grid.gm << ',' << grid.gk << ','
     << local << ',' << kron::to_string(dtype) << ',' << seed;
  return os.str();
}

std::vector<Scenario> load_scenarios(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scenario file " + path);
  std::vector<Scenario> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(Scenario::parse(line));
  }
  return out;
}

#define KRON_INSTANTIATE(T)                                                                \
  template void store_gpu_tile(std::span<const T>, std::size_t, std::size_t,               \
                               const DistPlan&, std::size_t, Matrix<T>&);                  \
  template DistResult<T> dist_kronmatmul(const Matrix<T>&, const FactorChain<T>&,          \
                                         const DistPlan&, const DistOptions&,              \
                                         const std::type_identity_t<RoundObserver<T>>&);

KRON_INSTANTIATE(float)
KRON_INSTANTIATE(double)
#undef KRON_INSTANTIATE

}  // namespace kron
