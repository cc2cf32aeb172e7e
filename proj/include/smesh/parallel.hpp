#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace smesh {

/// Runs fn(task) for task in [0, tasks) on up to `threads` workers. Tasks are
/// claimed dynamically, so callers must make each task's output independent of
/// which worker ran it.
template <typename Fn>
void parallel_for(int tasks, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(tasks, 1));
  if (threads == 1) {
    for (int t = 0; t < tasks; ++t) fn(t);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int t = next++; t < tasks; t = next++) {
        try {
          fn(t);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace smesh
