#include "rgbadit/common.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace rgbadit {

void log_warn(const std::string& msg) {
    std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

void log_info(const std::string& msg) {
    std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

namespace {
int g_requested_threads = 0;  // 0 = auto
constexpr int kSpinRounds = 20000;  // ~0.1 ms of spinning before workers sleep
}

// Workers spin briefly on the epoch counter before falling back to a condvar;
// at gemm-call granularity wake latency would otherwise dominate the work.
// Chunk assignment is static per epoch: worker w always owns chunk w+1, the
// calling thread owns chunk 0.
struct ThreadPool::Impl {
    std::vector<std::thread> workers;
    std::mutex mu;
    std::condition_variable cv_work;
    std::atomic<uint64_t> epoch{0};
    std::atomic<int> pending{0};
    std::atomic<bool> stop{false};
    const std::function<void(int, int)>* fn = nullptr;
    int n      = 0;
    int chunks = 0;

    explicit Impl(int workers_count) {
        for (int w = 0; w < workers_count; ++w) {
            workers.emplace_back([this, w] { worker_loop(w); });
        }
    }

    ~Impl() {
        stop.store(true, std::memory_order_release);
        cv_work.notify_all();
        for (auto& t : workers) t.join();
    }

    void run_chunk(int chunk) {
        const int64_t b = static_cast<int64_t>(n) * chunk / chunks;
        const int64_t e = static_cast<int64_t>(n) * (chunk + 1) / chunks;
        if (b < e) (*fn)(static_cast<int>(b), static_cast<int>(e));
    }

    void worker_loop(int index) {
        uint64_t seen = 0;
        for (;;) {
            int spins = 0;
            while (epoch.load(std::memory_order_acquire) == seen) {
                if (stop.load(std::memory_order_acquire)) return;
                if (++spins > kSpinRounds) {
                    std::unique_lock<std::mutex> lk(mu);
                    cv_work.wait_for(lk, std::chrono::milliseconds(50), [&] {
                        return stop.load(std::memory_order_acquire) ||
                               epoch.load(std::memory_order_acquire) != seen;
                    });
                    spins = 0;
                }
            }
            seen = epoch.load(std::memory_order_acquire);
            if (index + 1 < chunks) {
                run_chunk(index + 1);
                pending.fetch_sub(1, std::memory_order_acq_rel);
            }
        }
    }
};

ThreadPool::ThreadPool(int threads) : threads_(threads) {
    impl_ = new Impl(threads_ - 1);
}

ThreadPool::~ThreadPool() {
    delete impl_;
}

void ThreadPool::set_threads(int n) {
    g_requested_threads = n;
}

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool([] {
        if (g_requested_threads > 0) return g_requested_threads;
        if (const char* env = std::getenv("RGBADIT_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        return hw > 0 ? hw : 1;
    }());
    return pool;
}

void ThreadPool::parallel_ranges(int n, const std::function<void(int, int)>& fn) {
    if (n <= 0) return;
    const int want = std::min(threads_, n);
    if (want <= 1) {
        fn(0, n);
        return;
    }
    Impl& im  = *impl_;
    im.fn     = &fn;
    im.n      = n;
    im.chunks = want;
    im.pending.store(want - 1, std::memory_order_release);
    im.epoch.fetch_add(1, std::memory_order_acq_rel);
    {
        std::lock_guard<std::mutex> lk(im.mu);  // closes the missed-wakeup window
    }
    im.cv_work.notify_all();
    im.run_chunk(0);
    while (im.pending.load(std::memory_order_acquire) != 0) {
        // the other chunks are already running on workers
    }
    im.fn = nullptr;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h             = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace rgbadit
