// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace emforge {

// Worker cap: EMFORGE_THREADS when set to a positive integer, otherwise the
// number of logical cores.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
// write results into per-index slots so merge order never depends on
// scheduling. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace emforge
