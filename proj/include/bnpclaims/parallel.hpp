#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bnpc {

/// Runs fn(i) for i in [0, n) over contiguous static chunks. Each index is
/// handled by exactly one worker, so writes to slot i are race-free and the
/// result does not depend on the thread count. The first exception thrown by
/// any worker is rethrown on the caller's thread.
template <class Fn>
void parallel_for(std::size_t n, Fn &&fn, unsigned threads = 0) {
  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex guard;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi)
      break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i)
          fn(i);
      } catch (...) {
        std::lock_guard lock(guard);
        if (!first)
          first = std::current_exception();
      }
    });
  }
  for (auto &t : pool)
    t.join();
  if (first)
    std::rethrow_exception(first);
}

} // namespace bnpc
