// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace serireg {

namespace {

int default_thread_count() {
    if (const char* env = std::getenv("SERIREG_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int>& thread_override() {
    static std::atomic<int> value{0};
    return value;
}

} // namespace

int thread_count() {
    const int n = thread_override().load();
    return n > 0 ? n : default_thread_count();
}

void set_thread_count(int n) {
    thread_override().store(n > 0 ? n : 0);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    const int workers = std::min<std::int64_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }

    struct Failure {
        std::int64_t index;
        std::exception_ptr error;
    };
    std::vector<Failure> failures(workers, Failure{-1, nullptr});
    std::vector<std::thread> pool;
    pool.reserve(workers);

    const std::int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::int64_t begin = w * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&, w, begin, end] {
            for (std::int64_t i = begin; i < end; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    failures[w] = Failure{i, std::current_exception()};
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();

    // Rethrow the failure with the smallest index so error behaviour does not
    // depend on thread scheduling.
    const Failure* first = nullptr;
    for (const auto& f : failures) {
        if (f.error && (!first || f.index < first->index)) first = &f;
    }
    if (first) std::rethrow_exception(first->error);
}

} // namespace serireg
