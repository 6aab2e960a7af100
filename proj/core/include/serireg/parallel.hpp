// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace serireg {

/// Number of worker threads parallel_for may use. Defaults to the
/// SERIREG_THREADS environment variable, falling back to
/// std::thread::hardware_concurrency().
int thread_count();

/// Override the worker count; n <= 0 restores the default.
void set_thread_count(int n);

/// Run fn(i) for i in [0, n). Work is split into contiguous index chunks, one
/// per worker; every invocation writes only to its own index, so results are
/// identical for any thread count. If a worker throws, the exception from the
/// smallest index is rethrown after all workers join.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

} // namespace serireg
