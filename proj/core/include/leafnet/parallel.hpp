// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace leafnet {

/// Worker count used by data-parallel kernels. Defaults to LEAFNET_THREADS
/// when set, otherwise the hardware concurrency.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(begin, end) over a static partition of [0, n). Callers must only
/// parallelize loops whose iterations write disjoint outputs, so results never
/// depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

/// Training reallocates the same multi-megabyte activation buffers every
/// step. On glibc this keeps freed blocks in the heap instead of returning
/// them to the OS, which avoids refaulting fresh pages; elsewhere a no-op.
/// Call once at program start.
void retain_freed_memory();

}  // namespace leafnet
