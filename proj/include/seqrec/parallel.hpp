#pragma once

#include <cstddef>
#include <functional>

namespace seqrec {

/// Sets the worker count for parallel_for. 0 restores the default
/// (hardware concurrency). Numerical results never depend on this value:
/// work is always partitioned into a fixed number of chunks and any
/// cross-chunk reduction happens in chunk order on the caller's thread.
void set_num_threads(int n);
int num_threads();

/// Number of chunks parallel kernels partition their work into.
/// Fixed so results are independent of the worker count.
inline constexpr int kParallelChunks = 16;

/// Runs fn(chunk_index, begin, end) over [0, n) split into kParallelChunks
/// contiguous ranges. Chunks may execute concurrently on worker threads;
/// each chunk index runs exactly once. Blocks until all chunks finish.
/// With one worker everything runs inline on the calling thread.
void parallel_for(std::size_t n, const std::function<void(int, std::size_t, std::size_t)>& fn);

}  // namespace seqrec
