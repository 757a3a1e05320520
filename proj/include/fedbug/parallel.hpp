#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace fedbug {

/// Caps `requested` (0 = hardware concurrency) by the FEDBUG_THREADS
/// environment variable when set. Always returns at least 1.
inline std::size_t resolve_threads(std::size_t requested) {
    std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
    if (const char* env = std::getenv("FEDBUG_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(1, n);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Every task runs
/// even if another throws; the exception of the lowest failing index is
/// rethrown so failures are reported deterministically.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(count);
    auto guarded = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) guarded(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace fedbug
