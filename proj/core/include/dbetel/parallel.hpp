#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace dbetel {

/// Run fn(i) for i in [0, n) over `workers` threads (static chunking).
/// fn must be safe to call concurrently for distinct i.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int used = std::min(workers, n);
  pool.reserve(used);
  for (int w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += used) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dbetel
