#pragma once

// Deterministic work-sharing: parallel_for splits an index range across a
// fixed worker count. Each index is processed exactly once and all randomness
// is stream-addressed by index, so results do not depend on the split or on
// scheduling. Reductions must be written into per-index slots and combined
// serially by the caller to keep floating-point summation order fixed.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace nodetherm {

inline void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  int nthreads = int(std::min<int64_t>(workers, n));
  std::atomic<int64_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto body = [&]() {
    for (;;) {
      int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace nodetherm
