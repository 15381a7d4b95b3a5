#include <cstring>

#include "jescore/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace jescore::kernels::detail {

template <class T>
void vadd_scalar(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void vsub_scalar(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void vmul_scalar(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void vscale_scalar(const T* a, T s, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <class T>
void vaxpy_scalar(T a, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
T vsum_scalar(const T* a, size_t n) {
  T acc{};
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

template <class T>
T vdot_scalar(const T* a, const T* b, size_t n) {
  T acc{};
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Direct convolution. Each (n, cout) output plane is owned by one iteration,
// so the loop parallelizes with no cross-thread accumulation and results do
// not depend on the thread count.
template <class T>
void conv2d_fwd_scalar(const Conv2dShape& s, const T* x, const T* k, T* y) {
  std::memset(y, 0, static_cast<size_t>(s.y_numel()) * sizeof(T));
  const int64_t planes = s.n * s.cout;
#pragma omp parallel for schedule(static)
  for (int64_t plane = 0; plane < planes; ++plane) {
    const int64_t in = plane / s.cout;
    const int64_t co = plane % s.cout;
    T* yp = y + (in * s.cout + co) * s.hout * s.wout;
    for (int64_t ci = 0; ci < s.cin; ++ci) {
      const T* xp = x + (in * s.cin + ci) * s.h * s.w;
      const T* kp = k + (co * s.cin + ci) * s.kh * s.kw;
      for (int64_t kh = 0; kh < s.kh; ++kh) {
        for (int64_t kw = 0; kw < s.kw; ++kw) {
          const T wgt = kp[kh * s.kw + kw];
          if (wgt == T{}) continue;
          for (int64_t oh = 0; oh < s.hout; ++oh) {
            const int64_t ih = oh * s.stride + kh - s.pad;
            if (ih < 0 || ih >= s.h) continue;
            const T* xrow = xp + ih * s.w;
            T* yrow = yp + oh * s.wout;
            for (int64_t ow = 0; ow < s.wout; ++ow) {
              const int64_t iw = ow * s.stride + kw - s.pad;
              if (iw < 0 || iw >= s.w) continue;
              yrow[ow] += wgt * xrow[iw];
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_dx_scalar(const Conv2dShape& s, const T* gy, const T* k, T* gx) {
  std::memset(gx, 0, static_cast<size_t>(s.x_numel()) * sizeof(T));
  const int64_t planes = s.n * s.cin;
#pragma omp parallel for schedule(static)
  for (int64_t plane = 0; plane < planes; ++plane) {
    const int64_t in = plane / s.cin;
    const int64_t ci = plane % s.cin;
    T* gxp = gx + (in * s.cin + ci) * s.h * s.w;
    for (int64_t co = 0; co < s.cout; ++co) {
      const T* gyp = gy + (in * s.cout + co) * s.hout * s.wout;
      const T* kp = k + (co * s.cin + ci) * s.kh * s.kw;
      for (int64_t kh = 0; kh < s.kh; ++kh) {
        for (int64_t kw = 0; kw < s.kw; ++kw) {
          const T wgt = kp[kh * s.kw + kw];
          if (wgt == T{}) continue;
          for (int64_t oh = 0; oh < s.hout; ++oh) {
            const int64_t ih = oh * s.stride + kh - s.pad;
            if (ih < 0 || ih >= s.h) continue;
            const T* gyrow = gyp + oh * s.wout;
            T* gxrow = gxp + ih * s.w;
            for (int64_t ow = 0; ow < s.wout; ++ow) {
              const int64_t iw = ow * s.stride + kw - s.pad;
              if (iw < 0 || iw >= s.w) continue;
              gxrow[iw] += wgt * gyrow[ow];
            }
          }
        }
      }
    }
  }
}

// Each (co, ci, kh, kw) weight is owned by one iteration of the outer loop
// over co, summed over samples in a fixed order.
template <class T>
void conv2d_dk_scalar(const Conv2dShape& s, const T* x, const T* gy, T* gk) {
  std::memset(gk, 0, static_cast<size_t>(s.k_numel()) * sizeof(T));
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < s.cout; ++co) {
    for (int64_t in = 0; in < s.n; ++in) {
      const T* gyp = gy + (in * s.cout + co) * s.hout * s.wout;
      for (int64_t ci = 0; ci < s.cin; ++ci) {
        const T* xp = x + (in * s.cin + ci) * s.h * s.w;
        T* gkp = gk + (co * s.cin + ci) * s.kh * s.kw;
        for (int64_t kh = 0; kh < s.kh; ++kh) {
          for (int64_t kw = 0; kw < s.kw; ++kw) {
            T acc{};
            for (int64_t oh = 0; oh < s.hout; ++oh) {
              const int64_t ih = oh * s.stride + kh - s.pad;
              if (ih < 0 || ih >= s.h) continue;
              const T* xrow = xp + ih * s.w;
              const T* gyrow = gyp + oh * s.wout;
              for (int64_t ow = 0; ow < s.wout; ++ow) {
                const int64_t iw = ow * s.stride + kw - s.pad;
                if (iw < 0 || iw >= s.w) continue;
                acc += xrow[iw] * gyrow[ow];
              }
            }
            gkp[kh * s.kw + kw] += acc;
          }
        }
      }
    }
  }
}

template <class T>
void matmul_nn_scalar(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  std::memset(c, 0, m * n * sizeof(T));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(m); ++i) {
    for (size_t l = 0; l < k; ++l) {
      const T av = a[i * k + l];
      const T* brow = b + l * n;
      T* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void matmul_nt_scalar(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(m); ++i) {
    for (size_t j = 0; j < n; ++j) {
      const T* arow = a + i * k;
      const T* brow = b + j * k;
      T acc{};
      for (size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      c[i * n + j] = acc;
    }
  }
}

template <class T>
void matmul_tn_scalar(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  std::memset(c, 0, m * n * sizeof(T));
  for (size_t l = 0; l < k; ++l) {
    const T* arow = a + l * m;
    const T* brow = b + l * n;
    for (size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

#define JESCORE_INSTANTIATE_SCALAR(T)                                                     \
  template void vadd_scalar<T>(const T*, const T*, T*, size_t);                           \
  template void vsub_scalar<T>(const T*, const T*, T*, size_t);                           \
  template void vmul_scalar<T>(const T*, const T*, T*, size_t);                           \
  template void vscale_scalar<T>(const T*, T, T*, size_t);                                \
  template void vaxpy_scalar<T>(T, const T*, T*, size_t);                                 \
  template T vsum_scalar<T>(const T*, size_t);                                            \
  template T vdot_scalar<T>(const T*, const T*, size_t);                                  \
  template void conv2d_fwd_scalar<T>(const Conv2dShape&, const T*, const T*, T*);         \
  template void conv2d_dx_scalar<T>(const Conv2dShape&, const T*, const T*, T*);          \
  template void conv2d_dk_scalar<T>(const Conv2dShape&, const T*, const T*, T*);          \
  template void matmul_nn_scalar<T>(const T*, const T*, T*, size_t, size_t, size_t);      \
  template void matmul_nt_scalar<T>(const T*, const T*, T*, size_t, size_t, size_t);      \
  template void matmul_tn_scalar<T>(const T*, const T*, T*, size_t, size_t, size_t);

JESCORE_INSTANTIATE_SCALAR(float)
JESCORE_INSTANTIATE_SCALAR(double)

#undef JESCORE_INSTANTIATE_SCALAR

}  // namespace jescore::kernels::detail
