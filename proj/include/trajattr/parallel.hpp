#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace trajattr {

// Runs fn(i) for i in [0, n) on up to `workers` threads with a fixed
// round-robin assignment. Callers write results into slot i, so the output
// never depends on the worker count. The first exception (lowest i) is
// rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += w) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace trajattr
