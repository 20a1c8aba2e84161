#pragma once

#include <functional>

namespace suq {

// Process-wide worker count used by sharded evaluation loops. Work items are
// keyed by index, so the value changes wall-clock time only.
void set_num_threads(int n);
int num_threads();

// Calls fn(i) for every i in [0, n), split into contiguous shards.
void parallel_for(long n, const std::function<void(long)>& fn);

}  // namespace suq
