#pragma once

#include <thread>
#include <vector>

namespace lidarfuse {

/// Static block partition of [begin, end) over up to n_threads workers.
/// f(i) must not touch shared mutable state outside its own index.
template <typename F>
void parallel_for(int begin, int end, int n_threads, F&& f) {
  const int count = end - begin;
  if (count <= 0) return;
  if (n_threads <= 1 || count == 1) {
    for (int i = begin; i < end; ++i) f(i);
    return;
  }
  const int workers = std::min(n_threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = begin + w; i < end; i += workers) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace lidarfuse
