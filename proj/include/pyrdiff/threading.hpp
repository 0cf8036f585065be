#pragma once

#include <functional>

namespace pyrdiff {

/// Worker cap: PYRDIFF_THREADS env var if set, else hardware concurrency.
int thread_count();

/// Override the worker cap for this process (0 restores the default probe).
void set_thread_count(int n);

/// Run fn(i) for i in [0, n). Work is split into contiguous chunks, one per
/// worker; chunk boundaries depend only on (n, worker count), so results that
/// are reduced per-index stay deterministic for a fixed worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

/// Chunked variant: fn(begin, end) per worker chunk.
void parallel_chunks(int n, const std::function<void(int, int)>& fn);

}  // namespace pyrdiff
