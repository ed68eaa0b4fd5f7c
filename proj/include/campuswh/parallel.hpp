#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cwh {

using Clock = std::chrono::steady_clock;
using Nanos = std::chrono::nanoseconds;

struct ParallelTiming {
  Nanos wall{0};
  /// Sum of per-task execution times; time spent waiting for a free worker
  /// is not included.
  Nanos busy{0};
  std::vector<Nanos> per_task;
};

/// Runs fn(task) for task in [0, tasks) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all threads have joined.
template <typename Fn>
ParallelTiming run_parallel(std::size_t tasks, std::size_t workers, Fn&& fn) {
  ParallelTiming timing;
  timing.per_task.assign(tasks, Nanos{0});
  const auto start = Clock::now();
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto drain = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1, std::memory_order_relaxed);
      if (task >= tasks) return;
      const auto t0 = Clock::now();
      try {
        fn(task);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
      timing.per_task[task] = std::chrono::duration_cast<Nanos>(Clock::now() - t0);
    }
  };

  const std::size_t n = std::max<std::size_t>(1, std::min(workers, tasks));
  if (n == 1) {
    drain();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) threads.emplace_back(drain);
  }
  timing.wall = std::chrono::duration_cast<Nanos>(Clock::now() - start);
  for (auto d : timing.per_task) timing.busy += d;
  if (failure) std::rethrow_exception(failure);
  return timing;
}

inline std::size_t default_worker_count() {
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace cwh
