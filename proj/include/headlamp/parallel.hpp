#pragma once

#include <cstddef>
#include <functional>

namespace headlamp {

/// Worker count: HEADLAMP_THREADS if set (>= 1), else hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) across worker threads. Results must be written
/// to per-index slots; callers reduce them in index order, so outcomes do not
/// depend on scheduling. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace headlamp
