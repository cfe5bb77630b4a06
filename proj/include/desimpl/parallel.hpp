#pragma once

#include <cstddef>
#include <functional>

namespace desimpl {

/// Worker count: DESIMPL_THREADS if set and positive, otherwise
/// std::thread::hardware_concurrency() (at least 1).
std::size_t default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
/// visited exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling. Exceptions are rethrown on the
/// calling thread (the one from the lowest index wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t threads = default_thread_count());

}  // namespace desimpl
