#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace autoadapt {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs exactly once;
/// per-index exceptions are captured and returned in index order (null on success).
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, std::size_t workers,
                                                    const std::function<void(std::size_t)> &fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1 || n <= 1) {
    run();
    return errors;
  }
  std::vector<std::thread> pool;
  const std::size_t t = std::min(workers, n);
  pool.reserve(t);
  for (std::size_t k = 0; k < t; ++k)
    pool.emplace_back(run);
  for (auto &th : pool)
    th.join();
  return errors;
}

inline std::string describe(const std::exception_ptr &e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception &x) {
    return x.what();
  } catch (...) {
    return "unknown error";
  }
}

} // namespace autoadapt
