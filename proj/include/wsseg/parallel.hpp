#pragma once

#include <cstddef>
#include <functional>

namespace wsseg {

/// Worker count used by parallel_for. Defaults to WSSEG_THREADS if set, else
/// hardware concurrency. Results never depend on this value: each index is
/// computed by exactly one worker with a fixed summation order.
int num_threads();
void set_num_threads(int n);

/// Runs fn(i) for i in [0, n). Indices are split into contiguous blocks.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace wsseg
