#pragma once

#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace mpcil {

/// Runs fn(worker_id, index) for index in [0, n). Worker w handles the strided
/// indices w, w+W, ... so per-index work is independent of the worker count;
/// callers who write results into index-addressed slots and reduce in index
/// order get bit-identical output for any number of workers. workers <= 1
/// runs inline.
template <typename F>
void parallel_for(int n, int workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(0, i);
    return;
  }
  const int W = std::min(workers, n);
  std::vector<std::thread> threads;
  threads.reserve(W);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < W; ++w) {
    threads.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += W) fn(w, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace mpcil
