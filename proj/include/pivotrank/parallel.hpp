#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pivotrank {

/// Run f(0..n-1) on up to `workers` threads. The first exception thrown (by
/// lowest index) is rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f)
{
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr error;
    std::size_t error_index = n;
    {
        std::vector<std::jthread> pool;
        const auto count = std::min(workers, n);
        pool.reserve(count);
        for (std::size_t t = 0; t < count; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        f(i);
                    } catch (...) {
                        std::lock_guard lock(mu);
                        if (i < error_index) {
                            error_index = i;
                            error = std::current_exception();
                        }
                    }
                }
            });
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace pivotrank
