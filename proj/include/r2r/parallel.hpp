#pragma once

#include <cstddef>
#include <functional>

namespace r2r {

/// Worker cap from R2R_THREADS (default: hardware concurrency, at least 1).
int worker_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Each index is
/// processed exactly once; callers write results into slot i, so reductions
/// stay in index order. The first exception thrown is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// splitmix64 finalizer; derives independent seeds from (seed, stream) pairs.
unsigned long long mix_seed(unsigned long long seed, unsigned long long stream);

}  // namespace r2r
