// AVX2+FMA kernel variants. This TU is compiled with -mavx2 -mfma and must
// only be entered after the runtime cpuid check in kernels.cpp.

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "jescore/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace jescore::kernels::detail {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

// y[0..len) += a * x[0..len)
inline void axpy_run(float a, const float* x, float* y, int64_t len) {
  const __m256 va = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= len; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < len; ++i) y[i] += a * x[i];
}

inline void axpy_run(double a, const double* x, double* y, int64_t len) {
  const __m256d va = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= len; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < len; ++i) y[i] += a * x[i];
}

inline float dot_run(const float* a, const float* b, int64_t len) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= len; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float r = hsum(acc);
  for (; i < len; ++i) r += a[i] * b[i];
  return r;
}

inline double dot_run(const double* a, const double* b, int64_t len) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= len; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum(acc);
  for (; i < len; ++i) r += a[i] * b[i];
  return r;
}

}  // namespace

template <>
void vadd_avx2<float>(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <>
void vadd_avx2<double>(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <>
void vsub_avx2<float>(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <>
void vsub_avx2<double>(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <>
void vmul_avx2<float>(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <>
void vmul_avx2<double>(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <>
void vscale_avx2<float>(const float* a, float s, float* out, size_t n) {
  const __m256 vs = _mm256_set1_ps(s);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

template <>
void vscale_avx2<double>(const double* a, double s, double* out, size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

template <>
void vaxpy_avx2<float>(float a, const float* x, float* y, size_t n) {
  axpy_run(a, x, y, static_cast<int64_t>(n));
}

template <>
void vaxpy_avx2<double>(double a, const double* x, double* y, size_t n) {
  axpy_run(a, x, y, static_cast<int64_t>(n));
}

template <>
float vsum_avx2<float>(const float* a, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

template <>
double vsum_avx2<double>(const double* a, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

template <>
float vdot_avx2<float>(const float* a, const float* b, size_t n) {
  return dot_run(a, b, static_cast<int64_t>(n));
}

template <>
double vdot_avx2<double>(const double* a, const double* b, size_t n) {
  return dot_run(a, b, static_cast<int64_t>(n));
}

// Convolution as im2col plus matmul, processed in sample blocks so the
// column buffer stays cache-friendly. The direct-loop scalar kernels remain
// the reference these are tested against.

namespace {

constexpr int64_t kColBudgetBytes = 16 << 20;

/// Reusable per-thread scratch; conv kernels fully overwrite their slices,
/// so stale contents never leak.
template <class T>
std::vector<T>& conv_scratch(int which, size_t n) {
  thread_local std::vector<T> bufs[3];
  auto& b = bufs[which];
  if (b.size() < n) b.resize(n);
  return b;
}

template <class T>
int64_t block_samples(const Conv2dShape& s) {
  const int64_t per_sample =
      s.cin * s.kh * s.kw * s.hout * s.wout * static_cast<int64_t>(sizeof(T));
  return std::max<int64_t>(1, std::min(s.n, kColBudgetBytes / std::max<int64_t>(per_sample, 1)));
}

/// cols[(ci kh kw), (i hout wout)] = x[n0 + i, ci, oh s + kh - p, ow s + kw - p]
///
/// Width-preserving stride-1 windows (wout == w) copy the whole shifted plane
/// in one memcpy and then zero the few out-of-window border cells, which is
/// where the bulk of the im2col time would otherwise go at small image sizes.
template <class T>
void im2col(const Conv2dShape& s, const T* x, int64_t n0, int64_t bn, T* cols) {
  const int64_t how = s.hout * s.wout;
  const int64_t width = bn * how;
  const bool plane_shift = s.stride == 1 && s.wout == s.w;
  for (int64_t ci = 0; ci < s.cin; ++ci) {
    for (int64_t kh = 0; kh < s.kh; ++kh) {
      for (int64_t kw = 0; kw < s.kw; ++kw) {
        T* row = cols + ((ci * s.kh + kh) * s.kw + kw) * width;
        const int64_t ow_lo = std::max<int64_t>(0, s.pad - kw);
        const int64_t ow_hi = std::min<int64_t>(s.wout, s.w + s.pad - kw);
        const int64_t oh_lo = std::max<int64_t>(0, s.pad - kh);
        const int64_t oh_hi = std::min<int64_t>(s.hout, s.h + s.pad - kh);
        for (int64_t i = 0; i < bn; ++i) {
          const T* xp = x + ((n0 + i) * s.cin + ci) * s.h * s.w;
          T* dst = row + i * how;
          if (plane_shift) {
            if (oh_lo >= oh_hi || ow_lo >= ow_hi) {
              std::memset(dst, 0, static_cast<size_t>(how) * sizeof(T));
              continue;
            }
            if (oh_lo > 0)
              std::memset(dst, 0, static_cast<size_t>(oh_lo * s.wout) * sizeof(T));
            if (oh_hi < s.hout)
              std::memset(dst + oh_hi * s.wout, 0,
                          static_cast<size_t>((s.hout - oh_hi) * s.wout) * sizeof(T));
            const int64_t shift = (kh - s.pad) * s.w + (kw - s.pad);
            const int64_t start = oh_lo * s.wout + ow_lo;
            const int64_t len = (oh_hi - oh_lo - 1) * s.wout + (ow_hi - ow_lo);
            std::memcpy(dst + start, xp + start + shift, static_cast<size_t>(len) * sizeof(T));
            // The copy dragged neighbor-row pixels into the out-of-window
            // border columns; those cells are padding and must read zero.
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              for (int64_t ow = 0; ow < ow_lo; ++ow) dst[oh * s.wout + ow] = T{};
              for (int64_t ow = ow_hi; ow < s.wout; ++ow) dst[oh * s.wout + ow] = T{};
            }
          } else {
            for (int64_t oh = 0; oh < s.hout; ++oh) {
              const int64_t ih = oh * s.stride + kh - s.pad;
              T* drow = dst + oh * s.wout;
              for (int64_t ow = 0; ow < s.wout; ++ow) {
                const int64_t iw = ow * s.stride + kw - s.pad;
                drow[ow] = (ih >= 0 && ih < s.h && iw >= 0 && iw < s.w) ? xp[ih * s.w + iw]
                                                                        : T{};
              }
            }
          }
        }
      }
    }
  }
}

/// gx[n0 + i, ci, ...] += col2im(cols), the adjoint of im2col. `cols` is
/// scratch and may be scribbled on: border cells that correspond to padding
/// are zeroed first so whole planes can be accumulated in one axpy.
template <class T>
void col2im_accumulate(const Conv2dShape& s, T* cols, int64_t n0, int64_t bn, T* gx) {
  const int64_t how = s.hout * s.wout;
  const int64_t width = bn * how;
  const bool plane_shift = s.stride == 1 && s.wout == s.w;
  for (int64_t ci = 0; ci < s.cin; ++ci) {
    for (int64_t kh = 0; kh < s.kh; ++kh) {
      for (int64_t kw = 0; kw < s.kw; ++kw) {
        T* row = cols + ((ci * s.kh + kh) * s.kw + kw) * width;
        const int64_t ow_lo = std::max<int64_t>(0, s.pad - kw);
        const int64_t ow_hi = std::min<int64_t>(s.wout, s.w + s.pad - kw);
        const int64_t oh_lo = std::max<int64_t>(0, s.pad - kh);
        const int64_t oh_hi = std::min<int64_t>(s.hout, s.h + s.pad - kh);
        for (int64_t i = 0; i < bn; ++i) {
          T* gxp = gx + ((n0 + i) * s.cin + ci) * s.h * s.w;
          T* src = row + i * how;
          if (plane_shift) {
            if (oh_lo >= oh_hi || ow_lo >= ow_hi) continue;
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              for (int64_t ow = 0; ow < ow_lo; ++ow) src[oh * s.wout + ow] = T{};
              for (int64_t ow = ow_hi; ow < s.wout; ++ow) src[oh * s.wout + ow] = T{};
            }
            const int64_t shift = (kh - s.pad) * s.w + (kw - s.pad);
            const int64_t start = oh_lo * s.wout + ow_lo;
            const int64_t len = (oh_hi - oh_lo - 1) * s.wout + (ow_hi - ow_lo);
            axpy_run(T(1), src + start, gxp + start + shift, len);
          } else {
            for (int64_t oh = 0; oh < s.hout; ++oh) {
              const int64_t ih = oh * s.stride + kh - s.pad;
              if (ih < 0 || ih >= s.h) continue;
              const T* srow = src + oh * s.wout;
              for (int64_t ow = 0; ow < s.wout; ++ow) {
                const int64_t iw = ow * s.stride + kw - s.pad;
                if (iw >= 0 && iw < s.w) gxp[ih * s.w + iw] += srow[ow];
              }
            }
          }
        }
      }
    }
  }
}

/// mat[co, i * how + j] <-> nchw[n0 + i, co, j]
template <class T>
void gather_plane_major(const Conv2dShape& s, const T* nchw, int64_t n0, int64_t bn, T* mat) {
  const int64_t how = s.hout * s.wout;
  for (int64_t co = 0; co < s.cout; ++co)
    for (int64_t i = 0; i < bn; ++i)
      std::memcpy(mat + co * bn * how + i * how, nchw + ((n0 + i) * s.cout + co) * how,
                  static_cast<size_t>(how) * sizeof(T));
}

template <class T>
void scatter_plane_major(const Conv2dShape& s, const T* mat, int64_t n0, int64_t bn, T* nchw) {
  const int64_t how = s.hout * s.wout;
  for (int64_t co = 0; co < s.cout; ++co)
    for (int64_t i = 0; i < bn; ++i)
      std::memcpy(nchw + ((n0 + i) * s.cout + co) * how, mat + co * bn * how + i * how,
                  static_cast<size_t>(how) * sizeof(T));
}

}  // namespace

template <class T>
void conv2d_fwd_avx2(const Conv2dShape& s, const T* x, const T* k, T* y) {
  const int64_t ckk = s.cin * s.kh * s.kw;
  const int64_t how = s.hout * s.wout;
  const int64_t block = block_samples<T>(s);
  auto& cols = conv_scratch<T>(0, static_cast<size_t>(ckk * block * how));
  auto& y_mat = conv_scratch<T>(1, static_cast<size_t>(s.cout * block * how));
  for (int64_t n0 = 0; n0 < s.n; n0 += block) {
    const int64_t bn = std::min(block, s.n - n0);
    im2col(s, x, n0, bn, cols.data());
    matmul_nn_avx2<T>(k, cols.data(), y_mat.data(), static_cast<size_t>(s.cout),
                      static_cast<size_t>(ckk), static_cast<size_t>(bn * how));
    scatter_plane_major(s, y_mat.data(), n0, bn, y);
  }
}

template <class T>
void conv2d_dx_avx2(const Conv2dShape& s, const T* gy, const T* k, T* gx) {
  std::memset(gx, 0, static_cast<size_t>(s.x_numel()) * sizeof(T));
  const int64_t ckk = s.cin * s.kh * s.kw;
  const int64_t how = s.hout * s.wout;
  const int64_t block = block_samples<T>(s);
  auto& gy_mat = conv_scratch<T>(1, static_cast<size_t>(s.cout * block * how));
  auto& cols = conv_scratch<T>(0, static_cast<size_t>(ckk * block * how));
  for (int64_t n0 = 0; n0 < s.n; n0 += block) {
    const int64_t bn = std::min(block, s.n - n0);
    gather_plane_major(s, gy, n0, bn, gy_mat.data());
    matmul_tn_avx2<T>(k, gy_mat.data(), cols.data(), static_cast<size_t>(ckk),
                      static_cast<size_t>(s.cout), static_cast<size_t>(bn * how));
    col2im_accumulate(s, cols.data(), n0, bn, gx);
  }
}

template <class T>
void conv2d_dk_avx2(const Conv2dShape& s, const T* x, const T* gy, T* gk) {
  std::memset(gk, 0, static_cast<size_t>(s.k_numel()) * sizeof(T));
  const int64_t ckk = s.cin * s.kh * s.kw;
  const int64_t how = s.hout * s.wout;
  const int64_t block = block_samples<T>(s);
  auto& cols = conv_scratch<T>(0, static_cast<size_t>(ckk * block * how));
  auto& gy_mat = conv_scratch<T>(1, static_cast<size_t>(s.cout * block * how));
  auto& gk_part = conv_scratch<T>(2, static_cast<size_t>(s.cout * ckk));
  for (int64_t n0 = 0; n0 < s.n; n0 += block) {
    const int64_t bn = std::min(block, s.n - n0);
    im2col(s, x, n0, bn, cols.data());
    gather_plane_major(s, gy, n0, bn, gy_mat.data());
    matmul_nt_avx2<T>(gy_mat.data(), cols.data(), gk_part.data(), static_cast<size_t>(s.cout),
                      static_cast<size_t>(bn * how), static_cast<size_t>(ckk));
    vaxpy_avx2<T>(T(1), gk_part.data(), gk, static_cast<size_t>(s.cout * ckk));
  }
}

// Register-blocked c += op(a) op(b): 4 output rows x 16 columns (f32) or
// x 8 columns (f64) held in YMM accumulators so the b panel is streamed once
// per 4-row block instead of once per k step.

namespace {

// stride_a selects the layout: a[i, l] = a_base[i * lda + l * stride_l].
// For nn: lda = k, stride_l = 1 reading rows; for tn: a is k x m, entry
// a[l * m + i], handled by the caller with swapped strides.
inline void mm_block4_f32(const float* a, size_t lda_i, size_t lda_l, const float* b, size_t ldb,
                          float* c, size_t ldc, size_t rows, size_t k, size_t cols_start,
                          size_t cols_end) {
  size_t j = cols_start;
  for (; j + 16 <= cols_end; j += 16) {
    __m256 acc[4][2];
    for (size_t r = 0; r < rows; ++r) {
      acc[r][0] = _mm256_setzero_ps();
      acc[r][1] = _mm256_setzero_ps();
    }
    for (size_t l = 0; l < k; ++l) {
      const __m256 vb0 = _mm256_loadu_ps(b + l * ldb + j);
      const __m256 vb1 = _mm256_loadu_ps(b + l * ldb + j + 8);
      for (size_t r = 0; r < rows; ++r) {
        const __m256 va = _mm256_set1_ps(a[r * lda_i + l * lda_l]);
        acc[r][0] = _mm256_fmadd_ps(va, vb0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_ps(va, vb1, acc[r][1]);
      }
    }
    for (size_t r = 0; r < rows; ++r) {
      _mm256_storeu_ps(c + r * ldc + j, acc[r][0]);
      _mm256_storeu_ps(c + r * ldc + j + 8, acc[r][1]);
    }
  }
  for (; j < cols_end; ++j) {
    for (size_t r = 0; r < rows; ++r) {
      float s = 0;
      for (size_t l = 0; l < k; ++l) s += a[r * lda_i + l * lda_l] * b[l * ldb + j];
      c[r * ldc + j] = s;
    }
  }
}

inline void mm_block4_f64(const double* a, size_t lda_i, size_t lda_l, const double* b,
                          size_t ldb, double* c, size_t ldc, size_t rows, size_t k,
                          size_t cols_start, size_t cols_end) {
  size_t j = cols_start;
  for (; j + 8 <= cols_end; j += 8) {
    __m256d acc[4][2];
    for (size_t r = 0; r < rows; ++r) {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
    for (size_t l = 0; l < k; ++l) {
      const __m256d vb0 = _mm256_loadu_pd(b + l * ldb + j);
      const __m256d vb1 = _mm256_loadu_pd(b + l * ldb + j + 4);
      for (size_t r = 0; r < rows; ++r) {
        const __m256d va = _mm256_set1_pd(a[r * lda_i + l * lda_l]);
        acc[r][0] = _mm256_fmadd_pd(va, vb0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(va, vb1, acc[r][1]);
      }
    }
    for (size_t r = 0; r < rows; ++r) {
      _mm256_storeu_pd(c + r * ldc + j, acc[r][0]);
      _mm256_storeu_pd(c + r * ldc + j + 4, acc[r][1]);
    }
  }
  for (; j < cols_end; ++j) {
    for (size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (size_t l = 0; l < k; ++l) s += a[r * lda_i + l * lda_l] * b[l * ldb + j];
      c[r * ldc + j] = s;
    }
  }
}

inline void mm_block4(const float* a, size_t li, size_t ll, const float* b, size_t ldb, float* c,
                      size_t ldc, size_t rows, size_t k, size_t c0, size_t c1) {
  mm_block4_f32(a, li, ll, b, ldb, c, ldc, rows, k, c0, c1);
}
inline void mm_block4(const double* a, size_t li, size_t ll, const double* b, size_t ldb,
                      double* c, size_t ldc, size_t rows, size_t k, size_t c0, size_t c1) {
  mm_block4_f64(a, li, ll, b, ldb, c, ldc, rows, k, c0, c1);
}

}  // namespace

template <class T>
void matmul_nn_avx2(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < static_cast<int64_t>(m); i0 += 4) {
    const size_t rows = std::min<size_t>(4, m - static_cast<size_t>(i0));
    mm_block4(a + static_cast<size_t>(i0) * k, k, 1, b, n, c + static_cast<size_t>(i0) * n, n,
              rows, k, 0, n);
  }
}

template <class T>
void matmul_tn_avx2(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  // a is k x m; entry (i, l) sits at a[l * m + i].
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < static_cast<int64_t>(m); i0 += 4) {
    const size_t rows = std::min<size_t>(4, m - static_cast<size_t>(i0));
    mm_block4(a + static_cast<size_t>(i0), 1, m, b, n, c + static_cast<size_t>(i0) * n, n, rows,
              k, 0, n);
  }
}

template <class T>
void matmul_nt_avx2(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  // c[i, j] = dot(a row i, b row j); four a rows share each streamed b row.
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < static_cast<int64_t>(m); i0 += 4) {
    const size_t rows = std::min<size_t>(4, m - static_cast<size_t>(i0));
    for (size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      for (size_t r = 0; r < rows; ++r)
        c[(static_cast<size_t>(i0) + r) * n + j] =
            dot_run(a + (static_cast<size_t>(i0) + r) * k, brow, static_cast<int64_t>(k));
    }
  }
}

#define JESCORE_INSTANTIATE_AVX2(T)                                                     \
  template void conv2d_fwd_avx2<T>(const Conv2dShape&, const T*, const T*, T*);         \
  template void conv2d_dx_avx2<T>(const Conv2dShape&, const T*, const T*, T*);          \
  template void conv2d_dk_avx2<T>(const Conv2dShape&, const T*, const T*, T*);          \
  template void matmul_nn_avx2<T>(const T*, const T*, T*, size_t, size_t, size_t);      \
  template void matmul_nt_avx2<T>(const T*, const T*, T*, size_t, size_t, size_t);      \
  template void matmul_tn_avx2<T>(const T*, const T*, T*, size_t, size_t, size_t);

JESCORE_INSTANTIATE_AVX2(float)
JESCORE_INSTANTIATE_AVX2(double)

#undef JESCORE_INSTANTIATE_AVX2

}  // namespace jescore::kernels::detail
