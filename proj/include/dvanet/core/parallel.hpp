#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace dva {

// Global worker count, set once from the CLI. Work is split into
// worker-private index ranges so results do not depend on the count.
int worker_count();
void set_worker_count(int n);

// fn(begin, end) over [0, n) split across workers. Runs inline when a single
// worker is configured or the range is trivial.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int workers = std::min<std::int64_t>(worker_count(), n);
  if (workers <= 1 || n <= 1) {
    if (n > 0) fn(std::int64_t(0), n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t b = w * chunk;
    const std::int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dva
