#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace pg {

/// Worker cap used by parallel loops (tiles, rows, frames).
int num_threads();
void set_num_threads(int n);

/// Runs body(begin, end, worker) over [0, n) split into contiguous chunks,
/// one per worker. The partition depends only on n and the worker count, so
/// per-worker partial results reduced in worker order are deterministic.
template <typename Body>
void parallel_chunks(int n, Body&& body) {
  const int workers = std::max(1, std::min(num_threads(), n));
  if (workers <= 1) {
    if (n > 0) body(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int begin = int(std::int64_t(n) * w / workers);
    const int end = int(std::int64_t(n) * (w + 1) / workers);
    pool.emplace_back([&body, begin, end, w] { body(begin, end, w); });
  }
  for (auto& t : pool) t.join();
}

template <typename Body>
void parallel_for(int n, Body&& body) {
  parallel_chunks(n, [&](int begin, int end, int) {
    for (int i = begin; i < end; ++i) body(i);
  });
}

inline int chunk_workers(int n) { return std::max(1, std::min(num_threads(), n)); }

}  // namespace pg
