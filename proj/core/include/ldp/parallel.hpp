#pragma once

#include <functional>

namespace ldp {

// Worker count: LDP_NUM_THREADS if set (>=1), else hardware concurrency.
int num_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks, one per
// worker. Callers must keep results per-index and reduce sequentially
// afterwards so the outcome is independent of scheduling.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace ldp
