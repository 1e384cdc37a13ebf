#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace dynint {

// Worker-pool width: DYNINT_THREADS overrides it, hardware concurrency is
// the default.
inline std::size_t worker_count() {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("DYNINT_THREADS")) {
        const long want = std::atol(env);
        if (want >= 1) n = static_cast<std::size_t>(want);
    }
    return n;
}

// Chunked parallel loop. Each index is visited exactly once; callers write
// to disjoint slots, so results are independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), n == 0 ? std::size_t(1) : n);
    if (workers <= 1 || n < 64) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace dynint
