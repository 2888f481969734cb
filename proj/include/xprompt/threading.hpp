#pragma once

#include <cstddef>
#include <functional>

namespace xp {

// Number of workers to use: n if n > 0, else hardware concurrency.
int resolve_threads(int n);

// Runs fn(i) for i in [0, count) on up to `threads` workers. Work is handed
// out item by item; callers that need deterministic reductions must write
// per-index results and reduce in index order afterwards, which makes the
// outcome independent of the worker count.
void parallel_for(size_t count, int threads, const std::function<void(size_t)>& fn);

}  // namespace xp
