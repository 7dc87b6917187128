#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "cliffm/common.hpp"

namespace cliffm {

// Process-wide worker count. 1 = single-threaded reference mode.
// Kernels partition work so each output element is produced by exactly one
// thread with a fixed inner accumulation order; results are therefore
// bit-identical for every thread count.
inline int& worker_threads() {
    static int n = 1;
    return n;
}

namespace detail {
inline bool& inside_pool_task() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    // Runs fn(begin, end) on contiguous chunks of [0, n). Blocks until done.
    // Not reentrant: calls from inside a pool task run serially.
    void run_chunks(i64 n, int threads, const std::function<void(i64, i64)>& fn) {
        if (n <= 0) return;
        if (threads > static_cast<int>(n)) threads = static_cast<int>(n);
        if (threads <= 1 || detail::inside_pool_task()) {
            fn(0, n);
            return;
        }
        ensure_workers(threads - 1);
        std::atomic<int> remaining(threads);
        i64 chunk = (n + threads - 1) / threads;
        auto body = [&, chunk, n](int idx) {
            i64 b = idx * chunk;
            i64 e = std::min<i64>(n, b + chunk);
            if (b < e) fn(b, e);
            if (remaining.fetch_sub(1) == 1) {
                std::lock_guard<std::mutex> g(mu_);
                done_cv_.notify_all();
            }
        };
        {
            std::lock_guard<std::mutex> g(mu_);
            task_ = body;
            active_ = threads - 1;
            generation_++;
            work_cv_.notify_all();
        }
        detail::inside_pool_task() = true;
        body(0);  // caller takes chunk 0
        detail::inside_pool_task() = false;
        {
            std::unique_lock<std::mutex> lock(mu_);
            done_cv_.wait(lock, [&] { return remaining.load() == 0; });
            task_ = nullptr;
        }
    }

private:
    ThreadPool() = default;
    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> g(mu_);
            stop_ = true;
            work_cv_.notify_all();
        }
        for (auto& t : workers_) t.join();
    }

    void ensure_workers(int count) {
        std::lock_guard<std::mutex> g(mu_);
        while (static_cast<int>(workers_.size()) < count) {
            int idx = static_cast<int>(workers_.size()) + 1;
            workers_.emplace_back([this, idx] { worker_loop(idx); });
        }
    }

    void worker_loop(int idx) {
        detail::inside_pool_task() = true;
        u64 seen = 0;
        for (;;) {
            std::function<void(int)> task;
            {
                std::unique_lock<std::mutex> lock(mu_);
                work_cv_.wait(lock,
                              [&] { return stop_ || (generation_ != seen && task_ && idx <= active_); });
                if (stop_) return;
                seen = generation_;
                task = task_;
            }
            task(idx);
        }
    }

    std::mutex mu_;
    std::condition_variable work_cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> workers_;
    std::function<void(int)> task_;
    int active_ = 0;
    u64 generation_ = 0;
    bool stop_ = false;
};

inline void parallel_for(i64 n, const std::function<void(i64, i64)>& fn) {
    ThreadPool::instance().run_chunks(n, worker_threads(), fn);
}

}  // namespace cliffm
