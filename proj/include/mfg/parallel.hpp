#pragma once

#include <cstddef>
#include <functional>

namespace mfg {

// Worker count: hardware concurrency capped by MFG_THREADS when set.
int worker_count();

// Runs body(i) for i in [0, n). Each index is processed exactly once; callers
// write to disjoint slots so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mfg
