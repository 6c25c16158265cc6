#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace usdrl {

/// Worker cap: USDRL_THREADS if set, otherwise hardware concurrency.
inline unsigned worker_count() {
    if (const char* env = std::getenv("USDRL_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
        return 1;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

/// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so
/// results do not depend on the thread count. Blocks until done.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
    const unsigned workers = std::min<std::size_t>(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace usdrl
