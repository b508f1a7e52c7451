#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rcrank {

// Worker cap: explicit request > RCRANK_THREADS env > hardware concurrency.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RCRANK_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(chunk_index, begin, end) over [0, n) split into a fixed number of
// chunks. The chunking depends only on (n, n_chunks), never on the thread
// count, so any chunk-indexed reduction stays deterministic.
inline void parallel_chunks(int n, int n_chunks, int threads,
                            const std::function<void(int, int, int)>& fn) {
  if (n <= 0) return;
  n_chunks = std::max(1, std::min(n_chunks, n));
  threads = std::max(1, std::min(threads, n_chunks));
  auto bounds = [&](int c) {
    int base = n / n_chunks, rem = n % n_chunks;
    int begin = c * base + std::min(c, rem);
    int len = base + (c < rem ? 1 : 0);
    return std::pair<int, int>(begin, begin + len);
  };
  if (threads == 1) {
    for (int c = 0; c < n_chunks; ++c) {
      auto [b, e] = bounds(c);
      fn(c, b, e);
    }
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        int c = next.fetch_add(1);
        if (c >= n_chunks) break;
        auto [b, e] = bounds(c);
        try {
          fn(c, b, e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace rcrank
