#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace gazeswap {

inline unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Items are split into
/// contiguous blocks, so any per-item output slot is written by exactly one
/// thread and results do not depend on the thread count. The first exception
/// by item index is rethrown after all threads finish.
template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& fn) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    std::vector<std::exception_ptr> errors(n);
    auto run = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
    };
    if (jobs == 1) {
        run(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t block = (n + jobs - 1) / jobs;
        for (unsigned t = 0; t < jobs; ++t) {
            const std::size_t lo = std::min(n, t * block), hi = std::min(n, lo + block);
            if (lo < hi) pool.emplace_back(run, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace gazeswap
