#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace ptmap {

/// Run body(i) for i in [0, count) on up to `threads` workers (0 = hardware).
/// Each index is processed exactly once; the exception of the lowest failing
/// index is rethrown after all workers finish.
template <class Body>
void parallel_for(int count, int threads, Body&& body) {
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, count);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(count, 0)));
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (int i = next++; i < count; i = next++) {
                    try {
                        body(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ptmap
