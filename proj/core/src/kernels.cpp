// SPDX-License-Identifier: Apache-2.0
#include "leafnet/kernels.hpp"

#include <algorithm>
#include <cstring>

#include "leafnet/parallel.hpp"

namespace leafnet::kernels {

namespace {
constexpr std::size_t kColTile = 256;
constexpr std::size_t kRowTile = 16;
constexpr std::size_t kMicroRows = 4;

// Register-blocked MR x NR block of C. Each element still sums its K terms in
// order p = 0, 1, ..., K-1, so blocking never changes the result; the vectors
// only run independent columns side by side.
template <class T>
void micro_block(const T* a, const T* b, T* c, std::size_t k, std::size_t n) {
  typedef T V __attribute__((vector_size(32)));
  constexpr std::size_t L = sizeof(V) / sizeof(T);
  V acc[kMicroRows][2];
  V b0, b1;
  for (std::size_t r = 0; r < kMicroRows; ++r) {
    std::memcpy(&acc[r][0], c + r * n, sizeof(V));
    std::memcpy(&acc[r][1], c + r * n + L, sizeof(V));
  }
  for (std::size_t p = 0; p < k; ++p) {
    std::memcpy(&b0, b + p * n, sizeof(V));
    std::memcpy(&b1, b + p * n + L, sizeof(V));
    for (std::size_t r = 0; r < kMicroRows; ++r) {
      const T av = a[r * k + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < kMicroRows; ++r) {
    std::memcpy(c + r * n, &acc[r][0], sizeof(V));
    std::memcpy(c + r * n + L, &acc[r][1], sizeof(V));
  }
}

template <class T>
void edge_block(const T* a, const T* b, T* c, std::size_t rows, std::size_t cols, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < rows; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}
}  // namespace

template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  constexpr std::size_t NR = 64 / sizeof(T);  // two 32-byte vectors per row
  if (!accumulate) std::fill(c, c + m * n, T(0));
  const std::size_t col_tiles = (n + kColTile - 1) / kColTile;
  const std::size_t row_tiles = (m + kRowTile - 1) / kRowTile;
  const std::size_t tiles = col_tiles * row_tiles;
  parallel_for(tiles, [&](std::size_t begin, std::size_t end) {
    for (std::size_t tile = begin; tile < end; ++tile) {
      const std::size_t i0 = (tile / col_tiles) * kRowTile;
      const std::size_t j0 = (tile % col_tiles) * kColTile;
      const std::size_t i1 = std::min(m, i0 + kRowTile);
      const std::size_t j1 = std::min(n, j0 + kColTile);
      std::size_t i = i0;
      for (; i + kMicroRows <= i1; i += kMicroRows) {
        std::size_t j = j0;
        for (; j + NR <= j1; j += NR) micro_block<T>(a + i * k, b + j, c + i * n + j, k, n);
        if (j < j1) edge_block(a + i * k, b + j, c + i * n + j, kMicroRows, j1 - j, k, n);
      }
      if (i < i1) edge_block(a + i * k, b + j0, c + i * n + j0, i1 - i, j1 - j0, k, n);
    }
  });
}

template <class T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock)
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock);
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
    }
}

template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void transpose<float>(const float*, float*, std::size_t, std::size_t);
template void transpose<double>(const double*, double*, std::size_t, std::size_t);

}  // namespace leafnet::kernels
