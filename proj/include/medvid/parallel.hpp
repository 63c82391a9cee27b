#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace medvid {

// Runs fn(0..n-1) across up to `workers` threads (static contiguous
// partition). Outputs must be written to per-index slots so results do not
// depend on the worker count. The first exception is rethrown after join.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t nthreads = workers < 1 ? 1 : static_cast<std::size_t>(workers);
    if (nthreads > n) nthreads = n;
    if (nthreads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(nthreads);
    const std::size_t per = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        const std::size_t begin = t * per;
        const std::size_t end = std::min(n, begin + per);
        if (begin >= end) break;
        threads.emplace_back([&, t, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace medvid
