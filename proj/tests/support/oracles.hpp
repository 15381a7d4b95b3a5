#pragma once

// Test-only reference implementations, written independently of the library
// paths they are used to check.

#include <cmath>
#include <functional>
#include <vector>

#include "jescore/rng.hpp"
#include "jescore/tape.hpp"
#include "jescore/tensor.hpp"

namespace jescore::testing {

inline double rel_err(double a, double b, double abs_floor = 1e-12) {
  double denom = std::max(std::abs(a), std::abs(b));
  if (denom < abs_floor) return 0.0;
  return std::abs(a - b) / denom;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double abs_floor = 1e-8) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = a.at(i), y = b.at(i);
    if (std::abs(x) < abs_floor && std::abs(y) < abs_floor) continue;
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), abs_floor}));
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, DType dt, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

/// Plain quadruple-loop cross-correlation with zero padding, the convolution
/// oracle. No shared code with the library kernels.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& k, int64_t stride, int64_t pad) {
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (w + 2 * pad - kw) / stride + 1;
  Tensor y = Tensor::zeros({n, cout, ho, wo}, x.dtype());
  for (int64_t in = 0; in < n; ++in)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          double acc = 0;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t dy = 0; dy < kh; ++dy)
              for (int64_t dx = 0; dx < kw; ++dx) {
                int64_t iy = oh * stride + dy - pad;
                int64_t ix = ow * stride + dx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x.at(((in * cin + ci) * h + iy) * w + ix) *
                       k.at(((co * cin + ci) * kh + dy) * kw + dx);
              }
          y.set(((in * cout + co) * ho + oh) * wo + ow, acc);
        }
  return y;
}

/// Central-difference gradient of a scalar-building function, in double
/// precision, step h = cbrt(machine eps) * (1 + |x_i|).
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x) {
  Tensor g = Tensor::zeros(x.shape(), DType::f64);
  const double base_h = std::cbrt(2.220446049250313e-16);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double h = base_h * (1.0 + std::abs(x.at(i)));
    Tensor xp = x.clone();
    xp.set(i, x.at(i) + h);
    Tensor xm = x.clone();
    xm.set(i, x.at(i) - h);
    g.set(i, (f(xp) - f(xm)) / (2.0 * h));
  }
  return g;
}

/// Checks reverse-mode gradients of a tape-built scalar against central
/// differences. Returns the worst per-coordinate relative error.
inline double gradcheck(const std::function<ad::Var(ad::Tape&, ad::Var)>& build, const Tensor& x,
                        double abs_floor = 1e-8) {
  ad::Tape tape;
  ad::Var in = tape.leaf(x, true);
  ad::Var out = build(tape, in);
  Tensor autograd = tape.value(tape.grad1(out, in));
  // The probe leaf keeps requires_grad on: the function under test may take
  // gradients with respect to its input internally.
  Tensor fd = fd_gradient(
      [&](const Tensor& xx) {
        ad::Tape t2;
        ad::Var v = t2.leaf(xx, true);
        return t2.value(build(t2, v)).item();
      },
      x);
  return max_rel_err(autograd, fd, abs_floor);
}

/// Full eigensystem of a small symmetric matrix by power iteration with
/// re-orthogonalization against already-found vectors plus a Rayleigh
/// quotient polish on the original matrix. Eigenvalues by descending |l|.
inline void power_iteration_spectrum(const Tensor& a, std::vector<double>& evals,
                                     std::vector<std::vector<double>>& evecs,
                                     uint64_t seed = 1234) {
  const int64_t d = a.dim(0);
  Tensor work = a.clone();
  Rng rng(seed);
  evals.clear();
  evecs.clear();
  auto matvec = [&](const Tensor& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < d; ++i) {
      double acc = 0;
      for (int64_t j = 0; j < d; ++j) acc += m.at(i * d + j) * v[static_cast<size_t>(j)];
      out[static_cast<size_t>(i)] = acc;
    }
    return out;
  };
  auto normalize = [&](std::vector<double>& v) {
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return norm;
  };
  for (int64_t k = 0; k < d; ++k) {
    std::vector<double> v(static_cast<size_t>(d));
    for (double& x : v) x = rng.normal();
    for (const auto& prev : evecs) {
      double dot = 0;
      for (int64_t i = 0; i < d; ++i) dot += v[static_cast<size_t>(i)] * prev[static_cast<size_t>(i)];
      for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(i)] -= dot * prev[static_cast<size_t>(i)];
    }
    normalize(v);
    double lambda = 0;
    for (int iter = 0; iter < 20000; ++iter) {
      std::vector<double> nv = matvec(work, v);
      for (const auto& prev : evecs) {
        double dot = 0;
        for (int64_t i = 0; i < d; ++i)
          dot += nv[static_cast<size_t>(i)] * prev[static_cast<size_t>(i)];
        for (int64_t i = 0; i < d; ++i)
          nv[static_cast<size_t>(i)] -= dot * prev[static_cast<size_t>(i)];
      }
      double norm = normalize(nv);
      double delta = 0;
      for (int64_t i = 0; i < d; ++i)
        delta = std::max(delta, std::abs(std::abs(nv[static_cast<size_t>(i)]) -
                                         std::abs(v[static_cast<size_t>(i)])));
      v = nv;
      lambda = norm;
      if (delta < 1e-15 && iter > 10) break;
    }
    // Rayleigh quotient against the original matrix removes deflation drift.
    std::vector<double> av = matvec(a, v);
    double num = 0;
    for (int64_t i = 0; i < d; ++i) num += v[static_cast<size_t>(i)] * av[static_cast<size_t>(i)];
    lambda = num;
    evals.push_back(lambda);
    evecs.push_back(v);
    // Hotelling deflation.
    for (int64_t i = 0; i < d; ++i)
      for (int64_t j = 0; j < d; ++j)
        work.set(i * d + j, work.at(i * d + j) -
                                lambda * v[static_cast<size_t>(i)] * v[static_cast<size_t>(j)]);
  }
}

}  // namespace jescore::testing
