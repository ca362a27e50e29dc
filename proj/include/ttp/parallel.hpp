#pragma once

#include <cstddef>
#include <functional>

namespace ttp {

// Worker count: TTP_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Iterations must be independent; results are
// identical for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace ttp
