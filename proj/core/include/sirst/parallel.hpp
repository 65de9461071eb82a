#pragma once

#include <cstddef>
#include <functional>

namespace sirst {

/// Worker count: hardware concurrency, capped by SIRST_THREADS when set.
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots; reduction order is the caller's business.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0);

}  // namespace sirst
