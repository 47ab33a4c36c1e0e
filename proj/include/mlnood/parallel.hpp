#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mlnood {

// Splits [0, n) into contiguous chunks aligned to `grain` and runs
// fn(begin, end) on each chunk, one thread per chunk. Each chunk writes a
// disjoint output range, so results do not depend on the thread count.
template <typename Fn>
void parallel_for_blocks(std::size_t n, std::size_t grain, Fn&& fn) {
  if (n == 0) return;
  const std::size_t blocks = (n + grain - 1) / grain;
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, blocks);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t per = (blocks + workers - 1) / workers;
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * per * grain;
    const std::size_t end = std::min(n, (w + 1) * per * grain);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace mlnood
