#pragma once

#include <cstddef>
#include <functional>

namespace driftflow {

/// Worker count: DRIFT_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Run body(begin, end) over [0, n) in contiguous chunks. Each index is
/// handled by exactly one call, so per-index results do not depend on the
/// number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace driftflow
