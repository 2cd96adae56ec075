#pragma once

#include <cstddef>
#include <functional>

namespace voxelenc {

// Worker count: VOXELENC_THREADS when set, else the number of logical cores.
std::size_t default_workers();

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index must write
// only its own output slot; callers reduce results in index order afterwards,
// so the outcome never depends on the worker count. The first exception
// thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace voxelenc
