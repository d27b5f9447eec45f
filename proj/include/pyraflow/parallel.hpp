#pragma once

#include <cstdint>
#include <functional>

namespace pyraflow {

// Worker cap for internal parallelism. Defaults to hardware concurrency,
// clamped by the PYRAFLOW_THREADS environment variable when set.
int max_threads();
void set_max_threads(int n);

// Runs fn over [0, n) split into one contiguous chunk per worker. Every
// index is processed by exactly one worker with the same arithmetic, so
// results are bit-identical for any worker count as long as chunks write
// disjoint outputs.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn,
                  int threads = 0);

}  // namespace pyraflow
