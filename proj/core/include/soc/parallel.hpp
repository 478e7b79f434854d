#pragma once

#include <cstddef>
#include <functional>

namespace soc {

/// Worker count: SOC_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_budget();

/// Calls fn(i) for i in [0, count) on up to thread_budget() threads. Each index
/// runs exactly once; callers write results into per-index slots so output
/// order never depends on scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace soc
