#pragma once

#include <cstddef>
#include <functional>

namespace stal3d {

/// Worker count: STAL3D_THREADS when set, else hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = worker_count()).
/// Each index runs exactly once; exceptions propagate after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned threads = 0);

}  // namespace stal3d
