#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

#include "kron/core.hpp"

namespace kron::detail {

/// Splits [0, n) into contiguous chunks, one per worker, and runs
/// fn(first, last, tally) on each. Per-worker tallies are summed in worker
/// order. The calling thread takes the first chunk.
template <typename Fn>
OpCounters parallel_blocks(std::size_t n, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<OpCounters> tallies(workers);
  if (workers == 1) {
    fn(std::size_t{0}, n, tallies[0]);
    return tallies[0];
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  auto chunk = [&](std::size_t w) {
    const std::size_t first = n * w / workers;
    const std::size_t last = n * (w + 1) / workers;
    try {
      fn(first, last, tallies[w]);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(chunk, w);
  chunk(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  OpCounters total;
  for (const auto& t : tallies) total += t;
  return total;
}

}  // namespace kron::detail
