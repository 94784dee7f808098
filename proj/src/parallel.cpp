// SPDX-License-Identifier: Apache-2.0

#include "collagan/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace collagan {

namespace {

int clamp_threads(long n) {
    long hw = static_cast<long>(std::max(1u, std::thread::hardware_concurrency()));
    return static_cast<int>(std::clamp(n, 1L, hw));
}

int initial_threads() {
    const char* env = std::getenv("COLLAGAN_THREADS");
    if (!env) return 1;
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    if (end == env) return 1;
    return clamp_threads(n);
}

std::atomic<int> g_threads{initial_threads()};

}  // namespace

int intra_op_threads() { return g_threads.load(); }

void set_intra_op_threads(int n) { g_threads.store(clamp_threads(n)); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
    int threads = static_cast<int>(std::min<std::int64_t>(intra_op_threads(), n));
    if (threads <= 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::int64_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace collagan
