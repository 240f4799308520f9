#include "seqrec/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace seqrec {
namespace {

int g_num_threads = 0;  // 0 = hardware concurrency

int resolved_threads() {
    if (g_num_threads > 0) return g_num_threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

// Long-lived worker pool. Workers sleep until a job is posted and pull
// chunk indices from a shared counter; the posting thread participates too.
class Pool {
public:
    static Pool& instance() {
        // Leaked on purpose: workers sleep forever and the process reaps
        // them at exit; destroying a pool with live threads would abort.
        static Pool* pool = new Pool();
        return *pool;
    }

    void run(int workers, int num_chunks, const std::function<void(int)>& chunk_fn) {
        // One job at a time; concurrent callers (independent graphs on
        // their own threads) take turns. parallel_for must not nest.
        std::lock_guard<std::mutex> job_lock(job_mutex_);
        ensure_workers(workers - 1);
        {
            std::lock_guard<std::mutex> lock(mutex_);
            chunk_fn_ = &chunk_fn;
            next_chunk_.store(0, std::memory_order_relaxed);
            total_chunks_ = num_chunks;
            pending_ = num_chunks;
            ++generation_;
        }
        cv_.notify_all();
        work();  // caller's thread pulls chunks as well
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        chunk_fn_ = nullptr;
    }

private:
    Pool() = default;

    void ensure_workers(int count) {
        std::lock_guard<std::mutex> lock(mutex_);
        while (static_cast<int>(threads_.size()) < count) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
            }
            work();
        }
    }

    void work() {
        for (;;) {
            const int chunk = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (chunk >= total_chunks_) break;
            (*chunk_fn_)(chunk);
            std::lock_guard<std::mutex> lock(mutex_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    std::mutex job_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(int)>* chunk_fn_ = nullptr;
    std::atomic<int> next_chunk_{0};
    int total_chunks_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
};

}  // namespace

void set_num_threads(int n) { g_num_threads = n < 0 ? 0 : n; }

int num_threads() { return resolved_threads(); }

void parallel_for(std::size_t n, const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t per_chunk = (n + kParallelChunks - 1) / kParallelChunks;
    const auto chunk_range = [&](int c, std::size_t& begin, std::size_t& end) {
        begin = static_cast<std::size_t>(c) * per_chunk;
        end = begin + per_chunk < n ? begin + per_chunk : n;
    };
    const int workers = resolved_threads();
    if (workers <= 1 || n == 1) {
        for (int c = 0; c < kParallelChunks; ++c) {
            std::size_t begin, end;
            chunk_range(c, begin, end);
            if (begin < end) fn(c, begin, end);
        }
        return;
    }
    const std::function<void(int)> chunk_fn = [&](int c) {
        std::size_t begin, end;
        chunk_range(c, begin, end);
        if (begin < end) fn(c, begin, end);
    };
    Pool::instance().run(workers, kParallelChunks, chunk_fn);
}

}  // namespace seqrec
