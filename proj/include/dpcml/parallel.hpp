#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dpcml {

// Runs fn(task) for task in [0, tasks) on up to `workers` threads. Tasks are
// claimed dynamically; callers that need determinism write into per-task
// slots and reduce in task order afterwards. The first exception thrown by
// any task is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t tasks, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, tasks));
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) fn(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      try {
        fn(t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks);
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace dpcml
