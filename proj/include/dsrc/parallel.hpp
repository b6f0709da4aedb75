#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace dsrc {

/// Splits [0, count) into at most `threads` contiguous chunks and runs
/// fn(chunk_index, begin, end) for each. With threads <= 1 everything runs
/// inline as a single chunk, which is the deterministic mode.
template <typename Fn>
std::size_t parallel_chunks(int threads, std::size_t count, Fn&& fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads > 1 ? threads : 1, count));
  if (workers == 1) {
    fn(std::size_t{0}, std::size_t{0}, count);
    return 1;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      const std::size_t b = count * t / workers;
      const std::size_t e = count * (t + 1) / workers;
      pool.emplace_back([&, t, b, e] {
        try {
          fn(t, b, e);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  return workers;
}

}  // namespace dsrc
