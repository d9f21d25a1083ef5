// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw dense kernels shared by ops and layers. Each output element is
// accumulated in a fixed sequential order, independent of tiling and of the
// worker count.

#include <cstddef>

namespace leafnet::kernels {

/// C[M x N] (+)= A[M x K] . B[K x N], all row-major.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// dst[cols x rows] = transpose(src[rows x cols]).
template <class T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols);

}  // namespace leafnet::kernels
