#pragma once

#include <cstdint>
#include <functional>

namespace mqn {

/// Worker count from MQN_THREADS (0 or 1 = sequential); hardware concurrency when unset.
int thread_count();

/// Splits [0, count) into contiguous chunks and runs `body(begin, end)` on each.
/// Chunks write disjoint outputs, so results do not depend on the thread count.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t, std::int64_t)>& body);

} // namespace mqn
