#include "splitfix/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace splitfix {

namespace {

std::atomic<long> g_cap{-1};

std::size_t read_env() {
    const char* v = std::getenv("SPLITFIX_THREADS");
    if (!v || !*v) return 0;
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    if (end == v || n < 0) return 0;
    return static_cast<std::size_t>(n);
}

}  // namespace

std::size_t thread_cap() {
    long c = g_cap.load();
    if (c < 0) {
        c = static_cast<long>(read_env());
        g_cap.store(c);
    }
    return static_cast<std::size_t>(c);
}

void set_thread_cap(std::size_t n) { g_cap.store(static_cast<long>(n)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::size_t workers = std::min(thread_cap(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace splitfix
