#include "sagan/common.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace sagan {

namespace {

int g_threads = 2;

// Minimal persistent pool: fixed workers pulling [begin, end) ranges.
class Pool {
public:
    explicit Pool(int workers) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    ~Pool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(int64_t n, const std::function<void(int64_t)>& fn) {
        std::unique_lock<std::mutex> lock(mu_);
        fn_ = &fn;
        next_ = 0;
        total_ = n;
        pending_ = n;
        ++generation_;
        cv_.notify_all();
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        fn_ = nullptr;
    }

    int size() const { return static_cast<int>(threads_.size()); }

private:
    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lock(mu_);
            cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            while (next_ < total_) {
                const int64_t i = next_++;
                lock.unlock();
                (*fn_)(i);
                lock.lock();
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(int64_t)>* fn_ = nullptr;
    int64_t next_ = 0, total_ = 0, pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

// The pool is sized once; effective parallelism is min(g_threads, pool size).
// Item-ordered reductions keep results invariant to the worker count.
Pool* pool_instance() {
    static Pool* pool = [] {
        unsigned hw = std::thread::hardware_concurrency();
        int workers = hw == 0 ? 2 : static_cast<int>(hw);
        if (workers > 8) workers = 8;
        return new Pool(workers);
    }();
    return pool;
}

}  // namespace

void set_num_threads(int n) {
    g_threads = n < 1 ? 1 : n;
}

int num_threads() {
    return g_threads;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    if (g_threads <= 1 || n == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    pool_instance()->run(n, fn);
}

}  // namespace sagan
