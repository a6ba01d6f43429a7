#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

#include "corrfuse/errors.hpp"

namespace corrfuse {

/// Runs f(0), ..., f(n-1) on up to `jobs` threads.  Items must be
/// independent; any RNG use inside must go through streams derived from the
/// item index, so the result is the same no matter how work is scheduled.
/// jobs <= 1 runs inline.  The first exception thrown by any item is
/// rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  if (jobs < 1) throw validation_error("jobs must be >= 1");
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        f(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

}  // namespace corrfuse
