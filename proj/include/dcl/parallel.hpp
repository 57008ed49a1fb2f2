#pragma once

#include <cstddef>
#include <functional>

namespace dcl {

// Worker cap, read once from DCL_THREADS (defaults to hardware concurrency).
std::size_t worker_threads();
void set_worker_threads(std::size_t n);

// When set, every reduction accumulates in a fixed lowest-index-first order.
bool deterministic();
void set_deterministic(bool on);

// Runs fn(i) for i in [0, n). Each index must write disjoint memory.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dcl
