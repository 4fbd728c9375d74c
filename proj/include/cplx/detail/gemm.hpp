#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

#include "cplx/tensor.hpp"

namespace cplx::detail {

enum class Trans { No, Yes };

// Packed register-blocked GEMM. Each output element is the sum over k taken in
// ascending order: terms are accumulated in T inside fixed chunks of kChunk and
// the chunk partials are summed in accum_t<T>. The order depends only on k, so
// a row of the product is bitwise independent of how many other rows exist.
template <typename T>
struct GemmBlocking {
  static constexpr std::size_t kLanes = 64 / sizeof(T);
  static constexpr std::size_t kRows = 6;
  static constexpr std::size_t kCols = 2 * kLanes;
  static constexpr std::size_t kChunk = 256;
};

template <typename T>
inline void gemm_micro_kernel(std::size_t kc, const T* __restrict a_panel, const T* __restrict b_panel,
                              T* __restrict tile) {
  using B = GemmBlocking<T>;
  typedef T vec __attribute__((vector_size(64)));
  vec c[B::kRows][2] = {};
  for (std::size_t k = 0; k < kc; ++k) {
    vec b0;
    vec b1;
    std::memcpy(&b0, b_panel + k * B::kCols, sizeof(vec));
    std::memcpy(&b1, b_panel + k * B::kCols + B::kLanes, sizeof(vec));
#pragma GCC unroll 6
    for (std::size_t r = 0; r < B::kRows; ++r) {
      const T a = a_panel[k * B::kRows + r];
      c[r][0] += a * b0;
      c[r][1] += a * b1;
    }
  }
  for (std::size_t r = 0; r < B::kRows; ++r) {
    std::memcpy(tile + r * B::kCols, &c[r][0], sizeof(vec));
    std::memcpy(tile + r * B::kCols + B::kLanes, &c[r][1], sizeof(vec));
  }
}

/// C (+)= op(A) * op(B) with op(A): m x k, op(B): k x n, all row-major with leading dimensions.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using B = GemmBlocking<T>;
  using Acc = accum_t<T>;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
    }
    return;
  }

  const std::size_t row_panels = (m + B::kRows - 1) / B::kRows;
  const std::size_t col_panels = (n + B::kCols - 1) / B::kCols;

  thread_local std::vector<T> a_pack;
  thread_local std::vector<T> b_pack;
  thread_local std::vector<Acc> acc;

  a_pack.assign(row_panels * k * B::kRows, T{0});
  for (std::size_t ip = 0; ip < row_panels; ++ip) {
    const std::size_t rows = std::min(B::kRows, m - ip * B::kRows);
    T* dst = a_pack.data() + ip * k * B::kRows;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = ip * B::kRows + r;
      if (trans_a == Trans::No) {
        const T* src = a + i * lda;
        for (std::size_t kk = 0; kk < k; ++kk) dst[kk * B::kRows + r] = src[kk];
      } else {
        for (std::size_t kk = 0; kk < k; ++kk) dst[kk * B::kRows + r] = a[kk * lda + i];
      }
    }
  }

  b_pack.resize(k * B::kCols);
  // Packs column panel jp of op(B) into b_pack, zero-padding past n.
  auto pack_b = [&](std::size_t jp) {
    const std::size_t j0 = jp * B::kCols;
    const std::size_t cols = std::min(B::kCols, n - j0);
    T* dst = b_pack.data();
    if (cols < B::kCols) std::fill(b_pack.begin(), b_pack.end(), T{0});
    if (trans_b == Trans::No) {
      for (std::size_t kk = 0; kk < k; ++kk) std::copy_n(b + kk * ldb + j0, cols, dst + kk * B::kCols);
    } else {
      for (std::size_t j = 0; j < cols; ++j) {
        const T* src = b + (j0 + j) * ldb;
        for (std::size_t kk = 0; kk < k; ++kk) dst[kk * B::kCols + j] = src[kk];
      }
    }
  };

  // One chunk: the register tile is the final sum. Several: chunk partials go through acc.
  const bool chunked = k > B::kChunk;
  alignas(64) T tile[B::kRows * B::kCols];
  auto store = [&](const auto* src, std::size_t i, std::size_t j0, std::size_t cols) {
    T* dst = c + i * ldc + j0;
    if (accumulate) {
      for (std::size_t j = 0; j < cols; ++j) dst[j] += static_cast<T>(src[j]);
    } else {
      for (std::size_t j = 0; j < cols; ++j) dst[j] = static_cast<T>(src[j]);
    }
  };
  if (chunked) acc.resize(row_panels * B::kRows * B::kCols);
  for (std::size_t jp = 0; jp < col_panels; ++jp) {
    const std::size_t j0 = jp * B::kCols;
    const std::size_t cols = std::min(B::kCols, n - j0);
    pack_b(jp);
    if (!chunked) {
      const T* b_panel = b_pack.data();
      for (std::size_t ip = 0; ip < row_panels; ++ip) {
        gemm_micro_kernel<T>(k, a_pack.data() + ip * k * B::kRows, b_panel, tile);
        const std::size_t rows = std::min(B::kRows, m - ip * B::kRows);
        for (std::size_t r = 0; r < rows; ++r) store(tile + r * B::kCols, ip * B::kRows + r, j0, cols);
      }
      continue;
    }
    std::fill(acc.begin(), acc.end(), Acc{0});
    for (std::size_t k0 = 0; k0 < k; k0 += B::kChunk) {
      const std::size_t kc = std::min(B::kChunk, k - k0);
      const T* b_panel = b_pack.data() + k0 * B::kCols;
      for (std::size_t ip = 0; ip < row_panels; ++ip) {
        gemm_micro_kernel<T>(kc, a_pack.data() + (ip * k + k0) * B::kRows, b_panel, tile);
        Acc* dst = acc.data() + ip * B::kRows * B::kCols;
        for (std::size_t t = 0; t < B::kRows * B::kCols; ++t) dst[t] += tile[t];
      }
    }
    for (std::size_t i = 0; i < m; ++i) store(acc.data() + i * B::kCols, i, j0, cols);
  }
}

}  // namespace cplx::detail
