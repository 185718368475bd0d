#pragma once

#include <functional>

namespace mvd {

// Calls fn(i) for i in [0, count) on up to `threads` workers. Indices are
// handed out dynamically; the first exception is rethrown after all workers
// finish.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

// Hardware concurrency, at least 1.
int default_threads();

}  // namespace mvd
