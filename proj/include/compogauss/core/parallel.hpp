#pragma once

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace cg {

namespace detail {
inline std::atomic<int>& thread_count_ref() {
  static std::atomic<int> n{static_cast<int>(std::thread::hardware_concurrency() ? std::thread::hardware_concurrency() : 1)};
  return n;
}
}  // namespace detail

inline void set_thread_count(int n) { detail::thread_count_ref() = n < 1 ? 1 : n; }
inline int thread_count() { return detail::thread_count_ref(); }

// Splits [0, n) into contiguous ranges and runs f(begin, end) on worker
// threads. Each index must own disjoint outputs; under that contract the
// result is bitwise independent of the thread count.
template <class F>
void parallel_ranges(int64_t n, F&& f) {
  if (n <= 0) return;
  int workers = thread_count();
  if (workers <= 1 || n == 1) {
    f(int64_t(0), n);
    return;
  }
  if (static_cast<int64_t>(workers) > n) workers = static_cast<int>(n);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers - 1));
  int64_t chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    int64_t b = w * chunk;
    int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&f, b, e] { f(b, e); });
  }
  f(int64_t(0), std::min<int64_t>(n, chunk));
  for (auto& t : threads) t.join();
}

template <class F>
void parallel_for(int64_t n, F&& f) {
  parallel_ranges(n, [&f](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) f(i);
  });
}

}  // namespace cg
