#pragma once

#include <cstddef>
#include <functional>

namespace lsp {

// Worker count from LSP_THREADS (0 or unset = hardware concurrency).
int thread_count();

// Overrides LSP_THREADS for the current process; 0 restores the default.
void set_thread_count(int n);

// Calls fn(i) for every i in [0, n). Indices are split into contiguous
// blocks, one per worker; fn must only write state owned by index i so that
// results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lsp
