#pragma once

#include <cstddef>
#include <functional>

namespace crashseq {

// Process-wide worker count used by parallel_for. 0 means "all hardware
// threads"; 1 forces serial execution.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Calls fn(i) for every i in [0, n). Work is split into contiguous chunks;
// callers must write results into index-addressed slots so the outcome does
// not depend on the thread count. The first exception thrown by any worker
// is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace crashseq
