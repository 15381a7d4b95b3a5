#pragma once

#include <cstddef>
#include <cstdint>

#include "jescore/errors.hpp"

namespace jescore::kernels {

/// Runtime kernel selection. AVX2 variants are used when the CPU supports
/// them and force_scalar is off; the scalar reference path is always
/// available and is the ground truth the SIMD variants are tested against.
bool cpu_has_avx2();
void set_force_scalar(bool force);
bool force_scalar();
bool use_avx2();

// ---------------------------------------------------------------------------
// Elementwise. `out` may alias `a`. Buffers must not partially overlap.
// ---------------------------------------------------------------------------
template <class T> void vadd(const T* a, const T* b, T* out, size_t n);
template <class T> void vsub(const T* a, const T* b, T* out, size_t n);
template <class T> void vmul(const T* a, const T* b, T* out, size_t n);
template <class T> void vscale(const T* a, T s, T* out, size_t n);
/// y += a * x
template <class T> void vaxpy(T a, const T* x, T* y, size_t n);
template <class T> T vsum(const T* a, size_t n);
template <class T> T vdot(const T* a, const T* b, size_t n);

// ---------------------------------------------------------------------------
// 2-d cross-correlation, NCHW input, OIHW kernel, symmetric zero padding.
// ---------------------------------------------------------------------------
struct Conv2dShape {
  int64_t n, cin, h, w;
  int64_t cout, kh, kw;
  int64_t stride, pad;
  int64_t hout, wout;

  static Conv2dShape make(int64_t n, int64_t cin, int64_t h, int64_t w, int64_t cout,
                          int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    if (stride < 1 || pad < 0) throw UsageError("conv2d: stride must be >=1 and pad >=0");
    int64_t hout = (h + 2 * pad - kh) / stride + 1;
    int64_t wout = (w + 2 * pad - kw) / stride + 1;
    if (hout < 1 || wout < 1) throw UsageError("conv2d: kernel larger than padded input");
    return {n, cin, h, w, cout, kh, kw, stride, pad, hout, wout};
  }
  int64_t x_numel() const { return n * cin * h * w; }
  int64_t k_numel() const { return cout * cin * kh * kw; }
  int64_t y_numel() const { return n * cout * hout * wout; }
};

template <class T> void conv2d_fwd(const Conv2dShape& s, const T* x, const T* k, T* y);
/// gx = adjoint of conv2d_fwd in x (transposed convolution of gy).
template <class T> void conv2d_dx(const Conv2dShape& s, const T* gy, const T* k, T* gx);
/// gk = adjoint of conv2d_fwd in k.
template <class T> void conv2d_dk(const Conv2dShape& s, const T* x, const T* gy, T* gk);

// ---------------------------------------------------------------------------
// Dense matmul, row-major. c is m x n.
//   nn: a is m x k, b is k x n      c = a b
//   nt: a is m x k, b is n x k      c = a b^T
//   tn: a is k x m, b is k x n      c = a^T b
// ---------------------------------------------------------------------------
template <class T> void matmul_nn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
template <class T> void matmul_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
template <class T> void matmul_tn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);

namespace detail {
// Scalar reference path (always compiled).
template <class T> void vadd_scalar(const T* a, const T* b, T* out, size_t n);
template <class T> void vsub_scalar(const T* a, const T* b, T* out, size_t n);
template <class T> void vmul_scalar(const T* a, const T* b, T* out, size_t n);
template <class T> void vscale_scalar(const T* a, T s, T* out, size_t n);
template <class T> void vaxpy_scalar(T a, const T* x, T* y, size_t n);
template <class T> T vsum_scalar(const T* a, size_t n);
template <class T> T vdot_scalar(const T* a, const T* b, size_t n);
template <class T> void conv2d_fwd_scalar(const Conv2dShape& s, const T* x, const T* k, T* y);
template <class T> void conv2d_dx_scalar(const Conv2dShape& s, const T* gy, const T* k, T* gx);
template <class T> void conv2d_dk_scalar(const Conv2dShape& s, const T* x, const T* gy, T* gk);
template <class T> void matmul_nn_scalar(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
template <class T> void matmul_nt_scalar(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
template <class T> void matmul_tn_scalar(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);

// AVX2+FMA path (separate TU, only invoked after the cpuid check).
template <class T> void vadd_avx2(const T* a, const T* b, T* out, size_t n);
template <class T> void vsub_avx2(const T* a, const T* b, T* out, size_t n);
template <class T> void vmul_avx2(const T* a, const T* b, T* out, size_t n);
template <class T> void vscale_avx2(const T* a, T s, T* out, size_t n);
template <class T> void vaxpy_avx2(T a, const T* x, T* y, size_t n);
template <class T> T vsum_avx2(const T* a, size_t n);
template <class T> T vdot_avx2(const T* a, const T* b, size_t n);
template <class T> void conv2d_fwd_avx2(const Conv2dShape& s, const T* x, const T* k, T* y);
template <class T> void conv2d_dx_avx2(const Conv2dShape& s, const T* gy, const T* k, T* gx);
template <class T> void conv2d_dk_avx2(const Conv2dShape& s, const T* x, const T* gy, T* gk);
template <class T> void matmul_nn_avx2(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
template <class T> void matmul_nt_avx2(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
template <class T> void matmul_tn_avx2(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
}  // namespace detail

}  // namespace jescore::kernels
