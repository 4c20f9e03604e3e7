#ifndef BICLSTM_PARALLEL_HPP
#define BICLSTM_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace biclstm {

// Runs fn(i) for i in [0,n) on up to `threads` workers. Callers write results
// into per-index slots and reduce serially afterwards, so the outcome is
// independent of the worker count.
template <typename F>
inline void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mtx;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mtx);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace biclstm

#endif
