#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace curate {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work is split into
/// contiguous shards; callers write results into pre-sized slots so output
/// never depends on the worker count. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

/// Counting semaphore with an observable high-water mark.
class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t limit) : limit_{std::max<std::size_t>(1, limit)} {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return inflight_ < limit_; });
    ++inflight_;
    peak_ = std::max(peak_, inflight_);
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      --inflight_;
    }
    cv_.notify_one();
  }
  [[nodiscard]] std::size_t limit() const noexcept { return limit_; }
  [[nodiscard]] std::size_t peak() const {
    std::lock_guard lock(mutex_);
    return peak_;
  }

 private:
  std::size_t limit_;
  std::size_t inflight_ = 0;
  std::size_t peak_ = 0;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
};

class InflightGuard {
 public:
  explicit InflightGuard(InflightLimiter& limiter) : limiter_{limiter} { limiter_.acquire(); }
  ~InflightGuard() { limiter_.release(); }
  InflightGuard(const InflightGuard&) = delete;
  InflightGuard& operator=(const InflightGuard&) = delete;

 private:
  InflightLimiter& limiter_;
};

}  // namespace curate
