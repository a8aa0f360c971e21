#pragma once

#include <cstddef>
#include <functional>

namespace matten {

/// Worker cap: MATTEN_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the worker count, so per-index work is
/// deterministic.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t max_workers = 0);

}  // namespace matten
