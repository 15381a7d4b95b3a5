#include "jescore/kernels.hpp"

#include <atomic>

namespace jescore::kernels {

namespace {
std::atomic<bool> g_force_scalar{false};

bool detect_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}
}  // namespace

bool cpu_has_avx2() {
  static const bool has = detect_avx2();
  return has;
}

void set_force_scalar(bool force) { g_force_scalar.store(force, std::memory_order_relaxed); }
bool force_scalar() { return g_force_scalar.load(std::memory_order_relaxed); }
bool use_avx2() { return cpu_has_avx2() && !force_scalar(); }

#define JESCORE_DISPATCH(T)                                                                  \
  template <>                                                                                \
  void vadd<T>(const T* a, const T* b, T* out, size_t n) {                                   \
    use_avx2() ? detail::vadd_avx2<T>(a, b, out, n) : detail::vadd_scalar<T>(a, b, out, n);  \
  }                                                                                          \
  template <>                                                                                \
  void vsub<T>(const T* a, const T* b, T* out, size_t n) {                                   \
    use_avx2() ? detail::vsub_avx2<T>(a, b, out, n) : detail::vsub_scalar<T>(a, b, out, n);  \
  }                                                                                          \
  template <>                                                                                \
  void vmul<T>(const T* a, const T* b, T* out, size_t n) {                                   \
    use_avx2() ? detail::vmul_avx2<T>(a, b, out, n) : detail::vmul_scalar<T>(a, b, out, n);  \
  }                                                                                          \
  template <>                                                                                \
  void vscale<T>(const T* a, T s, T* out, size_t n) {                                        \
    use_avx2() ? detail::vscale_avx2<T>(a, s, out, n)                                        \
               : detail::vscale_scalar<T>(a, s, out, n);                                     \
  }                                                                                          \
  template <>                                                                                \
  void vaxpy<T>(T a, const T* x, T* y, size_t n) {                                           \
    use_avx2() ? detail::vaxpy_avx2<T>(a, x, y, n) : detail::vaxpy_scalar<T>(a, x, y, n);    \
  }                                                                                          \
  template <>                                                                                \
  T vsum<T>(const T* a, size_t n) {                                                          \
    return use_avx2() ? detail::vsum_avx2<T>(a, n) : detail::vsum_scalar<T>(a, n);           \
  }                                                                                          \
  template <>                                                                                \
  T vdot<T>(const T* a, const T* b, size_t n) {                                              \
    return use_avx2() ? detail::vdot_avx2<T>(a, b, n) : detail::vdot_scalar<T>(a, b, n);     \
  }                                                                                          \
  template <>                                                                                \
  void conv2d_fwd<T>(const Conv2dShape& s, const T* x, const T* k, T* y) {                   \
    use_avx2() ? detail::conv2d_fwd_avx2<T>(s, x, k, y)                                      \
               : detail::conv2d_fwd_scalar<T>(s, x, k, y);                                   \
  }                                                                                          \
  template <>                                                                                \
  void conv2d_dx<T>(const Conv2dShape& s, const T* gy, const T* k, T* gx) {                  \
    use_avx2() ? detail::conv2d_dx_avx2<T>(s, gy, k, gx)                                     \
               : detail::conv2d_dx_scalar<T>(s, gy, k, gx);                                  \
  }                                                                                          \
  template <>                                                                                \
  void conv2d_dk<T>(const Conv2dShape& s, const T* x, const T* gy, T* gk) {                  \
    use_avx2() ? detail::conv2d_dk_avx2<T>(s, x, gy, gk)                                     \
               : detail::conv2d_dk_scalar<T>(s, x, gy, gk);                                  \
  }                                                                                          \
  template <>                                                                                \
  void matmul_nn<T>(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {            \
    use_avx2() ? detail::matmul_nn_avx2<T>(a, b, c, m, k, n)                                 \
               : detail::matmul_nn_scalar<T>(a, b, c, m, k, n);                              \
  }                                                                                          \
  template <>                                                                                \
  void matmul_nt<T>(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {            \
    use_avx2() ? detail::matmul_nt_avx2<T>(a, b, c, m, k, n)                                 \
               : detail::matmul_nt_scalar<T>(a, b, c, m, k, n);                              \
  }                                                                                          \
  template <>                                                                                \
  void matmul_tn<T>(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {            \
    use_avx2() ? detail::matmul_tn_avx2<T>(a, b, c, m, k, n)                                 \
               : detail::matmul_tn_scalar<T>(a, b, c, m, k, n);                              \
  }

JESCORE_DISPATCH(float)
JESCORE_DISPATCH(double)

#undef JESCORE_DISPATCH

}  // namespace jescore::kernels
