#pragma once

#include <cblas.h>

#include <algorithm>
#include <cstddef>
#include <span>
#include <type_traits>

namespace advt::kernels {

enum class Trans { kNo, kYes };

/// C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C, row-major.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (m == 0 || n == 0) return;
  const auto cta = ta == Trans::kYes ? CblasTrans : CblasNoTrans;
  const auto ctb = tb == Trans::kYes ? CblasTrans : CblasNoTrans;
  const int lda = static_cast<int>(ta == Trans::kYes ? m : k);
  const int ldb = static_cast<int>(tb == Trans::kYes ? k : n);
  const int ldc = static_cast<int>(n);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, cta, ctb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
                alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    cblas_dgemm(CblasRowMajor, cta, ctb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
                alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, padding;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h() * out_w(); }
};

/// Output columns [x0, x1) whose input column x*stride + k - padding lies inside [0, width).
inline void valid_span(std::size_t out, std::size_t width, std::size_t stride, std::size_t k, std::size_t padding,
                       std::size_t& x0, std::size_t& x1) {
  x0 = k >= padding ? 0 : (padding - k + stride - 1) / stride;
  const std::size_t limit = width + padding - k;  // x*stride < limit
  x1 = width + padding > k ? std::min(out, (limit + stride - 1) / stride) : 0;
  if (x1 < x0) x1 = x0;
}

/// Unfolds one image [C,H,W] into columns [C*kh*kw, OH*OW].
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        std::size_t x0, x1;
        valid_span(ow, g.width, g.stride, kj, g.padding, x0, x1);
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
          T* dst = row + y * ow;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          std::fill(dst, dst + x0, T{0});
          std::fill(dst + x1, dst + ow, T{0});
          if (x1 == x0) continue;
          const T* s = src + (x0 * g.stride + kj - g.padding);
          if (g.stride == 1) {
            std::copy(s, s + (x1 - x0), dst + x0);
          } else {
            for (std::size_t x = x0; x < x1; ++x, s += g.stride) dst[x] = *s;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back, accumulating into image [C,H,W].
template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        std::size_t x0, x1;
        valid_span(ow, g.width, g.stride, kj, g.padding, x0, x1);
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* src = row + y * ow;
          if (x1 == x0) continue;
          T* d = dst + (x0 * g.stride + kj - g.padding);
          for (std::size_t x = x0; x < x1; ++x, d += g.stride) *d += src[x];
        }
      }
    }
  }
}

}  // namespace advt::kernels
