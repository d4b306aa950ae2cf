#pragma once

#include <cstddef>
#include <functional>

namespace egodir {

/// Worker count used by data-parallel loops (default 1).
void set_thread_count(int threads);
int thread_count();

/// Runs fn(i) for i in [0, n), split into contiguous chunks across thread_count() workers.
/// fn must only write to state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace egodir
