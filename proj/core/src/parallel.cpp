// SPDX-License-Identifier: Apache-2.0
#include "leafnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace leafnet {
namespace {

std::size_t default_threads() {
  if (const char* env = std::getenv("LEAFNET_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// Fixed-size pool; one job at a time, submitted from the owning thread.
class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
  }
  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size(); }

  void run(std::size_t tasks, const std::function<void(std::size_t)>& task) {
    {
      std::lock_guard lock(mu_);
      task_ = &task;
      total_ = tasks;
      next_.store(0);
      done_ = 0;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    work();
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return done_ == total_; });
    task_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void work() {
    for (;;) {
      const std::size_t i = next_.fetch_add(1);
      if (i >= total_) return;
      try {
        (*task_)(i);
      } catch (...) {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      std::lock_guard lock(mu_);
      if (++done_ == total_) done_cv_.notify_all();
    }
  }

  void loop() {
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || (generation_ != seen && task_ != nullptr); });
        if (stop_) return;
        seen = generation_;
      }
      work();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t total_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t done_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

std::mutex g_config_mu;
std::size_t g_threads = 0;
std::unique_ptr<Pool> g_pool;
thread_local bool t_inside_parallel = false;

}  // namespace

std::size_t num_threads() {
  std::lock_guard lock(g_config_mu);
  if (g_threads == 0) g_threads = default_threads();
  return g_threads;
}

void set_num_threads(std::size_t n) {
  std::lock_guard lock(g_config_mu);
  g_threads = std::max<std::size_t>(n, 1);
  g_pool.reset();
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk) {
  if (n == 0) return;
  const std::size_t threads = num_threads();
  min_chunk = std::max<std::size_t>(min_chunk, 1);
  const std::size_t chunks = std::min(threads, (n + min_chunk - 1) / min_chunk);
  if (chunks <= 1 || t_inside_parallel) {
    fn(0, n);
    return;
  }
  Pool* pool = nullptr;
  {
    std::lock_guard lock(g_config_mu);
    if (!g_pool || g_pool->size() + 1 != threads) g_pool = std::make_unique<Pool>(threads - 1);
    pool = g_pool.get();
  }
  const std::size_t per = (n + chunks - 1) / chunks;
  const std::function<void(std::size_t)> task = [&](std::size_t c) {
    const std::size_t begin = c * per;
    const std::size_t end = std::min(n, begin + per);
    if (begin >= end) return;
    t_inside_parallel = true;
    fn(begin, end);
    t_inside_parallel = false;
  };
  pool->run(chunks, task);
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace leafnet
