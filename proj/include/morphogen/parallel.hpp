#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace morphogen {

// Global worker count for intra-op parallelism. 1 (the default) runs every
// loop sequentially, which is the reference order for the determinism
// contract. Workers split the index range into contiguous blocks and each
// index is computed by exactly one worker with the same inner-loop order as
// the sequential run, so results are bit-identical at any count.
inline int& thread_count() {
  static int n = 1;
  return n;
}

inline void set_thread_count(int n) { thread_count() = n < 1 ? 1 : n; }

namespace detail {

// Persistent pool; workers sleep between parallel_for calls. Worker w of
// `active` handles the contiguous block [w*chunk, (w+1)*chunk).
class WorkerPool {
 public:
  static WorkerPool& instance() {
    static WorkerPool pool;
    return pool;
  }

  void run(std::size_t n, const std::function<void(std::size_t)>& fn,
           int workers) {
    ensure_threads(workers - 1);  // the caller acts as worker 0
    std::size_t used = std::min<std::size_t>(workers, n);
    if (used < 2) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mutex_);
      fn_ = &fn;
      total_ = n;
      active_ = used;
      chunk_ = (n + used - 1) / used;
      remaining_ = static_cast<int>(used) - 1;
      ++generation_;
    }
    cv_start_.notify_all();

    const std::size_t hi = std::min(total_, chunk_);
    for (std::size_t i = 0; i < hi; ++i) fn(i);

    std::unique_lock<std::mutex> lock(mutex_);
    cv_done_.wait(lock, [this] { return remaining_ == 0; });
    fn_ = nullptr;
  }

 private:
  WorkerPool() = default;
  ~WorkerPool() {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_start_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void ensure_threads(int helpers) {
    std::unique_lock<std::mutex> lock(mutex_);
    while (static_cast<int>(threads_.size()) < helpers) {
      const std::size_t id = threads_.size() + 1;
      threads_.emplace_back([this, id] { worker_loop(id); });
    }
  }

  void worker_loop(std::size_t id) {
    std::uint64_t seen = 0;
    while (true) {
      const std::function<void(std::size_t)>* fn = nullptr;
      std::size_t lo = 0, hi = 0;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_start_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        if (id < active_) {
          fn = fn_;
          lo = id * chunk_;
          hi = std::min(total_, lo + chunk_);
        }
      }
      if (fn) {
        for (std::size_t i = lo; i < hi; ++i) (*fn)(i);
      }
      if (id < active_) {
        std::unique_lock<std::mutex> lock(mutex_);
        if (--remaining_ == 0) cv_done_.notify_one();
      }
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_start_, cv_done_;
  std::vector<std::thread> threads_;
  const std::function<void(std::size_t)>* fn_ = nullptr;
  std::size_t total_ = 0, chunk_ = 0, active_ = 0;
  int remaining_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = thread_count();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::function<void(std::size_t)> wrapped = std::ref(fn);
  detail::WorkerPool::instance().run(n, wrapped, workers);
}

}  // namespace morphogen
