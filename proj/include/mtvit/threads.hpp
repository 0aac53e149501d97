#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mtvit {

// Splits [0, n) into `threads` contiguous shards and runs fn(shard, begin,
// end) on each. Shard boundaries depend only on (n, threads), so callers that
// reduce shard results in shard order stay deterministic at a fixed thread
// count. threads <= 1 runs inline.
inline void parallel_shards(int n, int threads,
                            const std::function<void(int, int, int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    if (n > 0) fn(0, 0, n);
    return;
  }
  const int base = n / threads;
  const int rem = n % threads;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  int begin = 0;
  for (int t = 0; t < threads; ++t) {
    const int len = base + (t < rem ? 1 : 0);
    const int end = begin + len;
    pool.emplace_back([&, t, begin, end] {
      try {
        fn(t, begin, end);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace mtvit
