#include "pyraflow/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace pyraflow {

namespace {

int env_default() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* s = std::getenv("PYRAFLOW_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(s, &end, 10);
        if (end != s && v >= 1) n = std::min<long>(n, v) > 0 ? static_cast<int>(std::min<long>(n, v)) : n;
    }
    return n;
}

std::atomic<int> g_max_threads{0};

}  // namespace

int max_threads() {
    int v = g_max_threads.load(std::memory_order_relaxed);
    if (v == 0) {
        v = env_default();
        g_max_threads.store(v, std::memory_order_relaxed);
    }
    return v;
}

void set_max_threads(int n) {
    g_max_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn,
                  int threads) {
    if (n <= 0) return;
    int nt = threads > 0 ? threads : max_threads();
    nt = static_cast<int>(std::min<std::int64_t>(nt, n));
    if (nt <= 1) {
        fn(0, n);
        return;
    }
    const std::int64_t chunk = (n + nt - 1) / nt;
    std::vector<std::thread> pool;
    pool.reserve(nt - 1);
    for (int t = 1; t < nt; ++t) {
        std::int64_t lo = t * chunk;
        std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(0, std::min<std::int64_t>(chunk, n));
    for (auto& th : pool) th.join();
}

}  // namespace pyraflow
