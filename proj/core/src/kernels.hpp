// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense float kernels shared by the convolution ops. Loop orders keep the
// innermost index contiguous so the compiler can vectorize without reordering
// reductions; results are deterministic for a given build.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace tractseg::kernels {

inline constexpr std::size_t kColumnTile = 512;

/// C[M,N] += A * B[K,N] where A(i, p) = a[i * row_stride + p * col_stride].
/// Column tiles keep the B panel cache-resident; four C rows share each B load.
inline void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const float* a,
                         std::size_t row_stride, std::size_t col_stride, const float* b, float* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnTile) {
    const std::size_t nb = std::min(kColumnTile, n - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      float* __restrict c0 = c + i * n + j0;
      float* __restrict c1 = c0 + n;
      float* __restrict c2 = c1 + n;
      float* __restrict c3 = c2 + n;
      for (std::size_t p = 0; p < k; ++p) {
        const float* ap = a + i * row_stride + p * col_stride;
        const float a0 = ap[0], a1 = ap[row_stride], a2 = ap[2 * row_stride],
                    a3 = ap[3 * row_stride];
        const float* __restrict bp = b + p * n + j0;
        for (std::size_t j = 0; j < nb; ++j) {
          const float bv = bp[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      float* __restrict c0 = c + i * n + j0;
      for (std::size_t p = 0; p < k; ++p) {
        const float a0 = a[i * row_stride + p * col_stride];
        const float* __restrict bp = b + p * n + j0;
        for (std::size_t j = 0; j < nb; ++j) c0[j] += a0 * bp[j];
      }
    }
  }
}

/// C[M,N] (+)= A[M,K] * B[K,N]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  gemm_strided(m, n, k, a, k, 1, b, c);
}

/// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  gemm_strided(m, n, k, a, 1, m, b, c);
}

inline constexpr std::size_t kLanes = 16;

inline float reduce_lanes(float* lanes, float tail) {
  for (std::size_t w = kLanes / 2; w > 0; w /= 2) {
    for (std::size_t l = 0; l < w; ++l) lanes[l] += lanes[l + w];
  }
  return lanes[0] + tail;
}

/// Fixed-order dot product split over 16 lanes.
inline float dot(const float* __restrict x, const float* __restrict y, std::size_t n) {
  float lanes[kLanes] = {};
  std::size_t p = 0;
  for (; p + kLanes <= n; p += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += x[p + l] * y[p + l];
  }
  float tail = 0.0f;
  for (; p < n; ++p) tail += x[p] * y[p];
  return reduce_lanes(lanes, tail);
}

/// C[M,N] += A[M,K] * B[N,K]^T. Each B row is reused across four A rows; every
/// element is summed in the same order as dot().
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  for (std::size_t j = 0; j < n; ++j) {
    const float* __restrict y = b + j * k;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      const float* __restrict x0 = a + i * k;
      const float* __restrict x1 = x0 + k;
      const float* __restrict x2 = x1 + k;
      const float* __restrict x3 = x2 + k;
      float l0[kLanes] = {}, l1[kLanes] = {}, l2[kLanes] = {}, l3[kLanes] = {};
      std::size_t p = 0;
      for (; p + kLanes <= k; p += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) {
          const float yv = y[p + l];
          l0[l] += x0[p + l] * yv;
          l1[l] += x1[p + l] * yv;
          l2[l] += x2[p + l] * yv;
          l3[l] += x3[p + l] * yv;
        }
      }
      float t0 = 0.0f, t1 = 0.0f, t2 = 0.0f, t3 = 0.0f;
      for (; p < k; ++p) {
        t0 += x0[p] * y[p];
        t1 += x1[p] * y[p];
        t2 += x2[p] * y[p];
        t3 += x3[p] * y[p];
      }
      c[i * n + j] += reduce_lanes(l0, t0);
      c[(i + 1) * n + j] += reduce_lanes(l1, t1);
      c[(i + 2) * n + j] += reduce_lanes(l2, t2);
      c[(i + 3) * n + j] += reduce_lanes(l3, t3);
    }
    for (; i < m; ++i) c[i * n + j] += dot(a + i * k, y, k);
  }
}

struct ConvGeometry {
  std::size_t channels;
  std::size_t height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride;
  std::size_t padding;
  std::size_t out_h, out_w;
};

/// Output positions o in [lo, hi) whose input index o * stride + k - padding
/// lies inside [0, extent).
struct ValidRange {
  std::size_t lo, hi;
};

inline ValidRange valid_range(std::size_t out, std::size_t extent, std::size_t k,
                              std::size_t stride, std::size_t padding) {
  std::size_t lo = 0;
  if (padding > k) lo = (padding - k + stride - 1) / stride;
  if (extent + padding <= k) return {0, 0};
  const std::size_t hi = std::min(out, (extent - 1 + padding - k) / stride + 1);
  return {std::min(lo, hi), hi};
}

/// image [C, H, W] -> columns [C*kH*kW, outH*outW]
inline void im2col(const ConvGeometry& g, const float* image, float* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const float* src = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      const ValidRange rr = valid_range(g.out_h, g.height, ki, g.stride, g.padding);
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const ValidRange cr = valid_range(g.out_w, g.width, kj, g.stride, g.padding);
        float* dst = cols + row * plane;
        std::fill(dst, dst + rr.lo * g.out_w, 0.0f);
        for (std::size_t oi = rr.lo; oi < rr.hi; ++oi) {
          const float* srow = src + (oi * g.stride + ki - g.padding) * g.width;
          float* drow = dst + oi * g.out_w;
          std::fill(drow, drow + cr.lo, 0.0f);
          if (cr.lo < cr.hi && g.stride == 1) {
            std::copy(srow + cr.lo + kj - g.padding, srow + cr.hi + kj - g.padding, drow + cr.lo);
          } else {
            for (std::size_t oj = cr.lo; oj < cr.hi; ++oj) drow[oj] = srow[oj * g.stride + kj - g.padding];
          }
          std::fill(drow + cr.hi, drow + g.out_w, 0.0f);
        }
        std::fill(dst + rr.hi * g.out_w, dst + plane, 0.0f);
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds columns back into image [C, H, W].
inline void col2im(const ConvGeometry& g, const float* cols, float* image) {
  const std::size_t plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    float* dst = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      const ValidRange rr = valid_range(g.out_h, g.height, ki, g.stride, g.padding);
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const ValidRange cr = valid_range(g.out_w, g.width, kj, g.stride, g.padding);
        const float* src = cols + row * plane;
        for (std::size_t oi = rr.lo; oi < rr.hi; ++oi) {
          float* drow = dst + (oi * g.stride + ki - g.padding) * g.width;
          const float* srow = src + oi * g.out_w;
          for (std::size_t oj = cr.lo; oj < cr.hi; ++oj) drow[oj * g.stride + kj - g.padding] += srow[oj];
        }
      }
    }
  }
}

}  // namespace tractseg::kernels
