#pragma once

#include <cstddef>
#include <functional>

namespace vcvae {

// Worker count used by parallel_for. Defaults to 1. Results of every caller
// are independent of this value: work is split into fixed tasks and any
// reduction happens afterwards in task order.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs task(i) for every i in [0, n). Exceptions from tasks are rethrown
// (the one with the lowest index wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task);

// Row block size for data-parallel passes. Fixed so that reductions over
// blocks do not depend on the thread count.
inline constexpr std::size_t kChunkRows = 64;

inline std::size_t chunk_count(std::size_t rows) { return (rows + kChunkRows - 1) / kChunkRows; }

}  // namespace vcvae
