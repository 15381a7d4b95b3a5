#include "jescore/biasvar.hpp"

#include <algorithm>
#include <cmath>

#include "jescore/analysis.hpp"
#include "jescore/errors.hpp"
#include "jescore/kernels.hpp"

namespace jescore::biasvar {

namespace {

double sigmoid(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return dot(a, a); }

/// KL between Bernoulli(p) and Bernoulli(q) with saturation-safe logs.
double bernoulli_kl(double p, double q) {
  q = std::clamp(q, 1e-300, 1.0 - 1e-16);
  double kl = 0;
  if (p > 0) kl += p * (std::log(p) - std::log(q));
  if (p < 1) kl += (1 - p) * (std::log(1 - p) - std::log(1 - q));
  return kl;
}

constexpr double kSeparationCap = 30.0;

double logistic_prob(const Logistic& l, const double* x) {
  double u = l.b;
  for (size_t i = 0; i < l.w.size(); ++i) u += l.w[i] * x[i];
  return sigmoid(u);
}

/// Solves the (d+1) x (d+1) symmetric positive system in place by Gaussian
/// elimination with partial pivoting.
std::vector<double> solve_dense(std::vector<double> a, std::vector<double> rhs) {
  const size_t n = rhs.size();
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (piv != col) {
      for (size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
      std::swap(rhs[col], rhs[piv]);
    }
    const double p = a[col * n + col];
    if (p == 0) throw NumericalError("newton: singular system");
    for (size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / p;
      for (size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> out(n);
  for (size_t r = n; r-- > 0;) {
    double s = rhs[r];
    for (size_t k = r + 1; k < n; ++k) s -= a[r * n + k] * out[k];
    out[r] = s / a[r * n + r];
  }
  return out;
}

}  // namespace

void FamilySpec::validate() const {
  if (d < 1) throw ConfigError("family: d must be >= 1");
  if (static_cast<int>(mu1.size()) != d || static_cast<int>(mu2.size()) != d)
    throw ConfigError("family: mean dimensions must equal d");
  if (!(rho > 0)) throw ConfigError("family: rho must be positive");
}

FamilySpec make_default_family(int d, double rho) {
  FamilySpec s;
  s.d = d;
  s.prior_logit = 0.25;
  s.mu1.assign(static_cast<size_t>(d), 0.0);
  s.mu2.assign(static_cast<size_t>(d), 0.0);
  // Means separated along a direction with all coordinates active.
  const double scale = 0.9 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i) {
    s.mu1[static_cast<size_t>(i)] = scale * (i % 2 == 0 ? 1.0 : 0.6);
    s.mu2[static_cast<size_t>(i)] = -scale * (i % 2 == 0 ? 0.7 : 1.0);
  }
  s.rho = rho;
  s.validate();
  return s;
}

LabeledPoints sample_family(const FamilySpec& spec, int64_t n, Rng& rng) {
  spec.validate();
  LabeledPoints pts;
  pts.n = n;
  pts.d = spec.d;
  pts.x.resize(static_cast<size_t>(n * spec.d));
  pts.labels.resize(static_cast<size_t>(n));
  const double p1 = sigmoid(spec.prior_logit);
  for (int64_t i = 0; i < n; ++i) {
    const bool one = rng.uniform01() < p1;
    pts.labels[static_cast<size_t>(i)] = one ? 1 : 2;
    const auto& mu = one ? spec.mu1 : spec.mu2;
    for (int j = 0; j < spec.d; ++j)
      pts.x[static_cast<size_t>(i * spec.d + j)] =
          mu[static_cast<size_t>(j)] + spec.rho * rng.normal();
  }
  return pts;
}

Theta fit_generative(const LabeledPoints& pts) {
  Theta t;
  t.mu1.assign(static_cast<size_t>(pts.d), 0.0);
  t.mu2.assign(static_cast<size_t>(pts.d), 0.0);
  int64_t n1 = 0;
  for (int64_t i = 0; i < pts.n; ++i) {
    const bool one = pts.labels[static_cast<size_t>(i)] == 1;
    if (one) ++n1;
    auto& mu = one ? t.mu1 : t.mu2;
    for (int j = 0; j < pts.d; ++j) mu[static_cast<size_t>(j)] += pts.x[static_cast<size_t>(i * pts.d + j)];
  }
  const int64_t n2 = pts.n - n1;
  if (n1 == 0 || n2 == 0) throw UsageError("fit_generative: a class is absent, resample");
  for (int j = 0; j < pts.d; ++j) {
    t.mu1[static_cast<size_t>(j)] /= static_cast<double>(n1);
    t.mu2[static_cast<size_t>(j)] /= static_cast<double>(n2);
  }
  t.prior_logit = std::log(static_cast<double>(n1) / static_cast<double>(n2));
  return t;
}

Logistic theta_to_logistic(const Theta& t) {
  Logistic l;
  l.w.resize(t.mu1.size());
  for (size_t i = 0; i < t.mu1.size(); ++i) l.w[i] = t.mu1[i] - t.mu2[i];
  l.b = t.prior_logit - 0.5 * (norm2(t.mu1) - norm2(t.mu2));
  return l;
}

Logistic true_posterior(const FamilySpec& spec) {
  Logistic l;
  const double r2 = spec.rho * spec.rho;
  l.w.resize(static_cast<size_t>(spec.d));
  for (int i = 0; i < spec.d; ++i)
    l.w[static_cast<size_t>(i)] =
        (spec.mu1[static_cast<size_t>(i)] - spec.mu2[static_cast<size_t>(i)]) / r2;
  l.b = spec.prior_logit - 0.5 * (norm2(spec.mu1) - norm2(spec.mu2)) / r2;
  return l;
}

Theta min_norm_theta(const Logistic& l) {
  // Minimize |theta|^2 subject to mu1 - mu2 = w and
  // prior_logit - (|mu1|^2 - |mu2|^2)/2 = b. Writing mu1 = m + w/2 and
  // mu2 = m - w/2 gives the closed form m = -b w / (2 + |w|^2).
  Theta t;
  const double wn2 = norm2(l.w);
  const double f = -l.b / (2.0 + wn2);
  std::vector<double> m(l.w.size());
  for (size_t i = 0; i < l.w.size(); ++i) m[i] = f * l.w[i];
  t.mu1.resize(l.w.size());
  t.mu2.resize(l.w.size());
  for (size_t i = 0; i < l.w.size(); ++i) {
    t.mu1[i] = m[i] + 0.5 * l.w[i];
    t.mu2[i] = m[i] - 0.5 * l.w[i];
  }
  t.prior_logit = l.b + dot(m, l.w);
  return t;
}

DiscFit fit_discriminative(const LabeledPoints& pts) {
  int64_t n1 = 0;
  for (auto lb : pts.labels) n1 += lb == 1;
  if (n1 == 0 || n1 == pts.n) throw UsageError("fit_discriminative: a class is absent, resample");

  const size_t dim = static_cast<size_t>(pts.d) + 1;
  std::vector<double> v(dim, 0.0);  // (w, b)
  auto nll = [&](const std::vector<double>& par) {
    double s = 0;
    for (int64_t i = 0; i < pts.n; ++i) {
      double u = par[dim - 1];
      for (int j = 0; j < pts.d; ++j)
        u += par[static_cast<size_t>(j)] * pts.x[static_cast<size_t>(i * pts.d + j)];
      const double z = pts.labels[static_cast<size_t>(i)] == 1 ? 1.0 : 0.0;
      // -log sigmoid(+-u), numerically stable.
      const double su = z > 0.5 ? u : -u;
      s += su >= 0 ? std::log1p(std::exp(-su)) : -su + std::log1p(std::exp(su));
    }
    return s / static_cast<double>(pts.n);
  };

  DiscFit fit;
  double cur = nll(v);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> grad(dim, 0.0);
    std::vector<double> hess(dim * dim, 0.0);
    for (int64_t i = 0; i < pts.n; ++i) {
      double u = v[dim - 1];
      for (int j = 0; j < pts.d; ++j)
        u += v[static_cast<size_t>(j)] * pts.x[static_cast<size_t>(i * pts.d + j)];
      const double p = sigmoid(u);
      const double z = pts.labels[static_cast<size_t>(i)] == 1 ? 1.0 : 0.0;
      const double r = p - z;
      const double wgt = p * (1 - p);
      for (size_t a = 0; a < dim; ++a) {
        const double xa = a + 1 == dim ? 1.0 : pts.x[static_cast<size_t>(i * pts.d) + a];
        grad[a] += r * xa;
        for (size_t b2 = a; b2 < dim; ++b2) {
          const double xb = b2 + 1 == dim ? 1.0 : pts.x[static_cast<size_t>(i * pts.d) + b2];
          hess[a * dim + b2] += wgt * xa * xb;
        }
      }
    }
    const double inv_n = 1.0 / static_cast<double>(pts.n);
    for (size_t a = 0; a < dim; ++a) {
      grad[a] *= inv_n;
      for (size_t b2 = a; b2 < dim; ++b2) {
        hess[a * dim + b2] = hess[a * dim + b2] * inv_n + (a == b2 ? 1e-10 : 0.0);
        hess[b2 * dim + a] = hess[a * dim + b2];
      }
    }
    double gnorm = 0;
    for (double gg : grad) gnorm += gg * gg;
    fit.newton_iterations = iter;
    if (std::sqrt(gnorm) < 1e-12) break;
    std::vector<double> step = solve_dense(hess, grad);
    double alpha = 1.0;
    for (int halving = 0; halving < 40; ++halving) {
      std::vector<double> trial = v;
      for (size_t a = 0; a < dim; ++a) trial[a] -= alpha * step[a];
      const double trial_nll = nll(trial);
      if (trial_nll <= cur + 1e-15) {
        v = std::move(trial);
        cur = trial_nll;
        break;
      }
      alpha *= 0.5;
    }
  }

  fit.logistic.w.assign(v.begin(), v.end() - 1);
  fit.logistic.b = v[dim - 1];
  fit.separated = std::sqrt(norm2(fit.logistic.w)) > kSeparationCap;
  fit.theta = min_norm_theta(fit.logistic);
  return fit;
}

KlEstimate kl_generalization_error(const Theta& t, const FamilySpec& spec, int64_t mc_n,
                                   uint64_t seed) {
  if (mc_n < 1) throw UsageError("kl: mc_n must be >= 1");
  spec.validate();
  const Logistic model = theta_to_logistic(t);
  const Logistic truth = true_posterior(spec);
  Rng rng = Rng(seed).fork("kl-eval");
  double sum = 0, sumsq = 0;
  std::vector<double> x(static_cast<size_t>(spec.d));
  const double p1 = sigmoid(spec.prior_logit);
  for (int64_t i = 0; i < mc_n; ++i) {
    const bool one = rng.uniform01() < p1;
    const auto& mu = one ? spec.mu1 : spec.mu2;
    for (int j = 0; j < spec.d; ++j)
      x[static_cast<size_t>(j)] = mu[static_cast<size_t>(j)] + spec.rho * rng.normal();
    const double kl = bernoulli_kl(logistic_prob(truth, x.data()), logistic_prob(model, x.data()));
    sum += kl;
    sumsq += kl * kl;
  }
  KlEstimate e;
  e.mean = sum / static_cast<double>(mc_n);
  const double var = std::max(sumsq / static_cast<double>(mc_n) - e.mean * e.mean, 0.0);
  e.stderr_mean = std::sqrt(var / static_cast<double>(mc_n));
  return e;
}

Moments estimate_moments(const FamilySpec& spec, Estimator kind, const Theta& theta_star,
                         int64_t mc_n, uint64_t seed) {
  // Monte Carlo over x only: the label is integrated out analytically given
  // x (its conditional distribution is Bernoulli(p_true(x))). This keeps the
  // exact rank deficiency of the discriminative Hessian, the fiber of the
  // theta -> (w, b) reparameterization, free of sampling noise, so the
  // spectral cutoff of the pseudo-inverse separates signal from null space.
  spec.validate();
  const int m = spec.m();
  const int d = spec.d;
  Tensor hess = Tensor::zeros({m, m}, DType::f64);
  Tensor cov = Tensor::zeros({m, m}, DType::f64);
  Tensor cond = Tensor::zeros({m, m}, DType::f64);
  std::vector<double> grad_mean(static_cast<size_t>(m), 0.0);

  Rng rng = Rng(seed).fork("moments");
  const Logistic truth = true_posterior(spec);
  const double p1 = sigmoid(spec.prior_logit);
  const double a_star = theta_star.prior_logit;
  std::vector<double> x(static_cast<size_t>(d));
  std::vector<double> jvec(static_cast<size_t>(m));

  for (int64_t it = 0; it < mc_n; ++it) {
    const bool one = rng.uniform01() < p1;
    const auto& mu = one ? spec.mu1 : spec.mu2;
    for (int j = 0; j < d; ++j)
      x[static_cast<size_t>(j)] = mu[static_cast<size_t>(j)] + spec.rho * rng.normal();
    const double pt = logistic_prob(truth, x.data());  // E[z | x]

    // Induced logit and its parameter Jacobian J at theta_star.
    double u = a_star;
    for (int j = 0; j < d; ++j) {
      jvec[static_cast<size_t>(1 + j)] =
          x[static_cast<size_t>(j)] - theta_star.mu1[static_cast<size_t>(j)];
      jvec[static_cast<size_t>(1 + d + j)] =
          -(x[static_cast<size_t>(j)] - theta_star.mu2[static_cast<size_t>(j)]);
      u += (theta_star.mu1[static_cast<size_t>(j)] - theta_star.mu2[static_cast<size_t>(j)]) *
           x[static_cast<size_t>(j)];
    }
    u -= 0.5 * (norm2(theta_star.mu1) - norm2(theta_star.mu2));
    jvec[0] = 1.0;
    const double p = sigmoid(u);
    const double wgt = p * (1 - p);
    const double r_mean = p - pt;  // E[p - z | x]

    // E[-d2 log p(c|x) | x] = p(1-p) J J^T + (p - pt) D.
    for (int a = 0; a < m; ++a)
      for (int b2 = 0; b2 < m; ++b2)
        cond.set(a * m + b2, cond.at(a * m + b2) + wgt * jvec[static_cast<size_t>(a)] *
                                                        jvec[static_cast<size_t>(b2)]);
    for (int j = 0; j < d; ++j) {
      cond.set((1 + j) * m + (1 + j), cond.at((1 + j) * m + (1 + j)) - r_mean);
      cond.set((1 + d + j) * m + (1 + d + j), cond.at((1 + d + j) * m + (1 + d + j)) + r_mean);
    }

    if (kind == Estimator::discriminative) {
      // Loss Hessian coincides with the conditional Hessian.
      for (int a = 0; a < m; ++a)
        for (int b2 = 0; b2 < m; ++b2)
          hess.set(a * m + b2, hess.at(a * m + b2) + wgt * jvec[static_cast<size_t>(a)] *
                                                          jvec[static_cast<size_t>(b2)]);
      for (int j = 0; j < d; ++j) {
        hess.set((1 + j) * m + (1 + j), hess.at((1 + j) * m + (1 + j)) - r_mean);
        hess.set((1 + d + j) * m + (1 + d + j),
                 hess.at((1 + d + j) * m + (1 + d + j)) + r_mean);
      }
      // Gradient (p - z) J: conditional mean and second moment in closed
      // form, E[(p - z)^2 | x] = p^2 - 2 p pt + pt.
      const double second = p * p - 2 * p * pt + pt;
      for (int a = 0; a < m; ++a) {
        grad_mean[static_cast<size_t>(a)] += r_mean * jvec[static_cast<size_t>(a)];
        for (int b2 = 0; b2 < m; ++b2)
          cov.set(a * m + b2, cov.at(a * m + b2) + second * jvec[static_cast<size_t>(a)] *
                                                       jvec[static_cast<size_t>(b2)]);
      }
    } else {
      // Generative loss: grad_a = sigma(a) - z, grad_mu1 = z (mu1 - x),
      // grad_mu2 = (1 - z)(mu2 - x); label moments are Bernoulli(pt).
      const double sa = sigmoid(a_star);
      std::vector<double> g1(static_cast<size_t>(d)), g2(static_cast<size_t>(d));
      for (int j = 0; j < d; ++j) {
        g1[static_cast<size_t>(j)] =
            theta_star.mu1[static_cast<size_t>(j)] - x[static_cast<size_t>(j)];
        g2[static_cast<size_t>(j)] =
            theta_star.mu2[static_cast<size_t>(j)] - x[static_cast<size_t>(j)];
      }
      // Conditional mean of the gradient.
      grad_mean[0] += sa - pt;
      for (int j = 0; j < d; ++j) {
        grad_mean[static_cast<size_t>(1 + j)] += pt * g1[static_cast<size_t>(j)];
        grad_mean[static_cast<size_t>(1 + d + j)] += (1 - pt) * g2[static_cast<size_t>(j)];
      }
      // Conditional second moment; z^2 = z and z(1-z) = 0 kill the cross
      // block between the two mean groups.
      cov.set(0, cov.at(0) + sa * sa - 2 * sa * pt + pt);
      for (int j = 0; j < d; ++j) {
        const double a_m1 = (sa - 1.0) * pt * g1[static_cast<size_t>(j)];
        const double a_m2 = sa * (1 - pt) * g2[static_cast<size_t>(j)];
        cov.set(0 * m + (1 + j), cov.at(0 * m + (1 + j)) + a_m1);
        cov.set((1 + j) * m + 0, cov.at((1 + j) * m + 0) + a_m1);
        cov.set(0 * m + (1 + d + j), cov.at(0 * m + (1 + d + j)) + a_m2);
        cov.set((1 + d + j) * m + 0, cov.at((1 + d + j) * m + 0) + a_m2);
        for (int k = 0; k < d; ++k) {
          cov.set((1 + j) * m + (1 + k),
                  cov.at((1 + j) * m + (1 + k)) +
                      pt * g1[static_cast<size_t>(j)] * g1[static_cast<size_t>(k)]);
          cov.set((1 + d + j) * m + (1 + d + k),
                  cov.at((1 + d + j) * m + (1 + d + k)) +
                      (1 - pt) * g2[static_cast<size_t>(j)] * g2[static_cast<size_t>(k)]);
        }
      }
      // Hessian: diag(sa (1 - sa), E[z] I, E[1 - z] I).
      hess.set(0, hess.at(0) + sa * (1 - sa));
      for (int j = 0; j < d; ++j) {
        hess.set((1 + j) * m + (1 + j), hess.at((1 + j) * m + (1 + j)) + pt);
        hess.set((1 + d + j) * m + (1 + d + j),
                 hess.at((1 + d + j) * m + (1 + d + j)) + (1 - pt));
      }
    }
  }

  const double inv = 1.0 / static_cast<double>(mc_n);
  for (int a = 0; a < m; ++a) {
    grad_mean[static_cast<size_t>(a)] *= inv;
    for (int b2 = 0; b2 < m; ++b2) {
      hess.set(a * m + b2, hess.at(a * m + b2) * inv);
      cond.set(a * m + b2, cond.at(a * m + b2) * inv);
      cov.set(a * m + b2, cov.at(a * m + b2) * inv);
    }
  }
  for (int a = 0; a < m; ++a)
    for (int b2 = 0; b2 < m; ++b2)
      cov.set(a * m + b2, cov.at(a * m + b2) - grad_mean[static_cast<size_t>(a)] *
                                                   grad_mean[static_cast<size_t>(b2)]);
  return {std::move(hess), std::move(cov), std::move(cond)};
}

Tensor pinv_symmetric(const Tensor& a, double cutoff_ratio, bool* ill_conditioned) {
  std::vector<double> evals;
  Tensor evecs;
  analysis::eig_symmetric(a, evals, evecs);
  const int64_t n = a.dim(0);
  double lmax = 0;
  for (double e : evals) lmax = std::max(lmax, std::abs(e));
  const double cutoff = cutoff_ratio * lmax;
  if (ill_conditioned) {
    *ill_conditioned = false;
    for (double e : evals)
      if (std::abs(e) > cutoff && std::abs(e) < 10.0 * cutoff) *ill_conditioned = true;
  }
  Tensor out = Tensor::zeros({n, n}, DType::f64);
  for (int64_t k = 0; k < n; ++k) {
    const double e = evals[static_cast<size_t>(k)];
    if (std::abs(e) <= cutoff) continue;
    const double invk = 1.0 / e;
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < n; ++c)
        out.set(r * n + c, out.at(r * n + c) + invk * evecs.at(k * n + r) * evecs.at(k * n + c));
  }
  return out;
}

Constants asymptotic_constants(const FamilySpec& spec, Estimator kind,
                               const ConstantsOptions& opts) {
  spec.validate();
  Constants out;
  out.m = spec.m();
  out.m_eff = spec.m_eff();

  if (kind == Estimator::generative) {
    // Population optimum in closed form: true prior logit and class means.
    out.theta_star.prior_logit = spec.prior_logit;
    out.theta_star.mu1 = spec.mu1;
    out.theta_star.mu2 = spec.mu2;
  } else {
    // The family realizes every logistic posterior, and the true posterior
    // of this world is logistic (shared class covariance), so the population
    // conditional optimum is the true posterior itself. A Newton fit on a
    // large sample converges to it only up to O(1/sqrt(n)), which would leak
    // into the null space of the Hessian and poison the pseudo-inverse, so
    // the constants are evaluated at the exact optimum; the sampled Newton
    // path is cross-checked against it in the test suite.
    out.theta_star = min_norm_theta(true_posterior(spec));
  }

  Moments mom = estimate_moments(spec, kind, out.theta_star, opts.moment_mc, opts.seed + 1);
  const int m = spec.m();
  bool ill = false;
  Tensor hp = pinv_symmetric(mom.hessian, 1e-8, &ill);
  out.ill_conditioned = ill;

  // Sigma = H^+ C H^+; v = Tr(Sigma * cond_hessian).
  Tensor tmp = Tensor::zeros({m, m}, DType::f64);
  Tensor sigma = Tensor::zeros({m, m}, DType::f64);
  const size_t mm = static_cast<size_t>(m);
  kernels::matmul_nn<double>(hp.data<double>().data(), mom.covariance.data<double>().data(),
                             tmp.data<double>().data(), mm, mm, mm);
  kernels::matmul_nn<double>(tmp.data<double>().data(), hp.data<double>().data(),
                             sigma.data<double>().data(), mm, mm, mm);
  double v = 0;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) v += sigma.at(r * m + c) * mom.cond_hessian.at(c * m + r);
  out.v = v;

  out.b = kl_generalization_error(out.theta_star, spec, opts.kl_mc, opts.seed + 2).mean;
  return out;
}

RegimeCurve regime_sweep(const FamilySpec& spec, const std::vector<int64_t>& n_grid,
                         int64_t repetitions, uint64_t seed, const ConstantsOptions& opts) {
  spec.validate();
  if (n_grid.empty() || repetitions < 2)
    throw UsageError("regime_sweep: need a nonempty n grid and at least 2 repetitions");
  for (size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1]) throw UsageError("regime_sweep: n grid must be increasing");

  RegimeCurve curve;
  curve.const_gen = asymptotic_constants(spec, Estimator::generative, opts);
  curve.const_dis = asymptotic_constants(spec, Estimator::discriminative, opts);

  Rng root(seed);
  for (Estimator kind : {Estimator::generative, Estimator::discriminative}) {
    std::vector<double> xs, ys;
    for (int64_t n : n_grid) {
      double sum = 0, sumsq = 0;
      int64_t used = 0, excluded = 0;
      for (int64_t rep = 0; rep < repetitions; ++rep) {
        Rng rep_rng = root.fork(kind == Estimator::generative ? "rep-gen" : "rep-dis",
                                static_cast<uint64_t>(n * 1000003 + rep));
        Theta theta;
        bool ok = false;
        for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
          LabeledPoints pts = sample_family(spec, n, rep_rng);
          try {
            if (kind == Estimator::generative) {
              theta = fit_generative(pts);
              ok = true;
            } else {
              DiscFit fit = fit_discriminative(pts);
              if (fit.separated) {
                ++excluded;
                break;  // separation: excluded from the averages
              }
              theta = fit.theta;
              ok = true;
            }
          } catch (const UsageError&) {
            // Class absent: resample within the repetition budget.
            if (attempt == 7) ++excluded;
          }
        }
        if (!ok) continue;
        KlEstimate kl = kl_generalization_error(theta, spec, opts.kl_mc,
                                                seed + static_cast<uint64_t>(rep * 7919 + n));
        sum += kl.mean;
        sumsq += kl.mean * kl.mean;
        ++used;
      }
      RegimeRow row;
      row.n = n;
      row.estimator = kind;
      row.mean_kl = used > 0 ? sum / static_cast<double>(used) : 0;
      const double var =
          used > 1 ? std::max(sumsq / used - row.mean_kl * row.mean_kl, 0.0) / (used - 1) : 0;
      row.stderr_mean = std::sqrt(var);
      const Constants& cc =
          kind == Estimator::generative ? curve.const_gen : curve.const_dis;
      row.bound = cc.b + cc.v / (2.0 * static_cast<double>(n));
      row.excluded = excluded;
      curve.rows.push_back(row);
      xs.push_back(1.0 / static_cast<double>(n));
      ys.push_back(row.mean_kl);
    }
    // Least squares of mean KL on 1/n: intercept b_hat, slope s, v_hat = 2s.
    const size_t k = xs.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < k; ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0, sxy = 0;
    for (size_t i = 0; i < k; ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
    }
    const double slope = sxx > 0 ? sxy / sxx : 0;
    const double intercept = my - slope * mx;
    double resid = 0;
    for (size_t i = 0; i < k; ++i) {
      const double e = ys[i] - intercept - slope * xs[i];
      resid += e * e;
    }
    if (kind == Estimator::generative) {
      curve.b_hat_gen = intercept;
      curve.v_hat_gen = 2 * slope;
      curve.fit_residual_gen = std::sqrt(resid / k);
    } else {
      curve.b_hat_dis = intercept;
      curve.v_hat_dis = 2 * slope;
      curve.fit_residual_dis = std::sqrt(resid / k);
    }
  }
  return curve;
}

double bound_curve(double b, double v, double n) { return b + v / n; }

double crossing_point(double b_gen, double v_gen, double b_dis, double v_dis) {
  if (b_gen == b_dis) throw UsageError("crossing_point: equal biases never cross");
  return (v_dis - v_gen) / (b_gen - b_dis);
}

}  // namespace jescore::biasvar
