#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace faith {

/// Run fn(i) for i in [0, n) on at most `width` threads. Work is claimed
/// dynamically, so callers write results into preallocated slot i to keep
/// input order. The first exception thrown by any task is rethrown after all
/// workers join; remaining tasks are skipped once one has failed.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t width, Fn&& fn) {
    if (n == 0) return;
    width = std::clamp<std::size_t>(width, 1, n);
    if (width == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> workers;
        workers.reserve(width);
        for (std::size_t w = 0; w < width; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                        failed = true;
                    }
                }
            });
        }
    }
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace faith
