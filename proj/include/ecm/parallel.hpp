#pragma once

#include <cstdint>
#include <functional>

namespace ecm {

/// Worker-thread cap: ECM_NUM_THREADS if set and positive, otherwise the
/// hardware concurrency.
int num_threads();

/// Runs fn(i) for i in [0, n). Each index must write disjoint outputs; the
/// split is static so results do not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace ecm
