#pragma once

#include <cstddef>
#include <functional>

namespace coarea {

/// Worker count: COAREA_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_count();

/// Calls body(i) for i in [0, n) on up to thread_count() threads. Work is
/// handed out in index order; if any call throws, the exception from the
/// smallest failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace coarea
