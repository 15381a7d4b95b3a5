#pragma once

#include <cstdint>
#include <vector>

#include "jescore/rng.hpp"
#include "jescore/tensor.hpp"

namespace jescore::biasvar {

/// Two-class Gaussian family with identity model covariance and parameters
/// theta = (prior logit, mu1, mu2), m = 2d + 1. The true world draws with
/// per-class standard deviation rho; rho = 1 is the well-specified case. The
/// induced conditional p(c|x) is logistic in d + 1 effective parameters,
/// which is what the pseudo-inverse in the variance formula sees.
struct FamilySpec {
  int d = 2;
  double prior_logit = 0.0;
  std::vector<double> mu1, mu2;
  double rho = 1.0;

  bool well_specified() const { return rho == 1.0; }
  int m() const { return 2 * d + 1; }
  int m_eff() const { return d + 1; }
  void validate() const;
};

FamilySpec make_default_family(int d, double rho = 1.0);

struct LabeledPoints {
  std::vector<double> x;        // row-major n x d
  std::vector<uint8_t> labels;  // 1 or 2
  int64_t n = 0;
  int d = 0;
};

LabeledPoints sample_family(const FamilySpec& spec, int64_t n, Rng& rng);

struct Theta {
  double prior_logit = 0;
  std::vector<double> mu1, mu2;
};

/// Closed-form joint MLE: empirical prior and per-class sample means.
/// Rejects samples missing a class (caller resamples).
Theta fit_generative(const LabeledPoints& pts);

struct Logistic {
  std::vector<double> w;
  double b = 0;
};

struct DiscFit {
  Theta theta;
  Logistic logistic;
  bool separated = false;
  int newton_iterations = 0;
};

/// Conditional MLE by damped Newton on the induced logistic form; among the
/// non-identifiable preimages, returns the minimum-norm displacement from
/// the zero reference (closed form). Near-separated fits (|w| beyond a cap)
/// are flagged for exclusion.
DiscFit fit_discriminative(const LabeledPoints& pts);

Logistic theta_to_logistic(const Theta& t);
Logistic true_posterior(const FamilySpec& spec);
Theta min_norm_theta(const Logistic& l);

struct KlEstimate {
  double mean = 0;
  double stderr_mean = 0;
};

/// Monte-Carlo E_x KL(p(c|x) || p_theta(c|x)), both sides in closed form.
KlEstimate kl_generalization_error(const Theta& t, const FamilySpec& spec, int64_t mc_n,
                                   uint64_t seed);

enum class Estimator { generative, discriminative };

/// Per-sample loss moments at theta_star, estimated by Monte Carlo:
/// E[hessian of the loss], Cov[gradient of the loss], and the conditional
/// Hessian E[-d2 log p(c|x)] used in the variance trace.
struct Moments {
  Tensor hessian;        // [m, m]
  Tensor covariance;     // [m, m]
  Tensor cond_hessian;   // [m, m]
};

Moments estimate_moments(const FamilySpec& spec, Estimator kind, const Theta& theta_star,
                         int64_t mc_n, uint64_t seed);

struct ConstantsOptions {
  int64_t moment_mc = 100000;
  int64_t kl_mc = 10000;
  int64_t fit_mc = 200000;  // sample size for the population discriminative fit
  uint64_t seed = 0;
};

struct Constants {
  double b = 0;
  double v = 0;
  int m = 0;
  int m_eff = 0;
  bool ill_conditioned = false;
  Theta theta_star;
};

/// Bias b = KL at theta_star and variance v = Tr(Sigma * cond_hessian) with
/// Sigma = pinv(H) Cov pinv(H), spectral cutoff 1e-8 * lambda_max.
Constants asymptotic_constants(const FamilySpec& spec, Estimator kind,
                               const ConstantsOptions& opts = {});

/// Moore-Penrose inverse of a symmetric matrix via the dense eigensolver.
/// `ill_conditioned` flags eigenvalues hovering at the cutoff boundary.
Tensor pinv_symmetric(const Tensor& a, double cutoff_ratio, bool* ill_conditioned = nullptr);

struct RegimeRow {
  int64_t n = 0;
  Estimator estimator = Estimator::generative;
  double mean_kl = 0;
  double stderr_mean = 0;
  double bound = 0;      // b + v / (2 n) from the asymptotic constants
  int64_t excluded = 0;  // separated or class-missing repetitions
};

struct RegimeCurve {
  std::vector<RegimeRow> rows;
  double b_hat_gen = 0, v_hat_gen = 0, fit_residual_gen = 0;
  double b_hat_dis = 0, v_hat_dis = 0, fit_residual_dis = 0;
  Constants const_gen, const_dis;
};

/// For each n: R independent fit/evaluate repetitions per estimator, then a
/// least-squares fit of mean KL against 1/n (so v_hat = 2 * slope).
RegimeCurve regime_sweep(const FamilySpec& spec, const std::vector<int64_t>& n_grid,
                         int64_t repetitions, uint64_t seed,
                         const ConstantsOptions& opts = {});

/// Stylized illustration curves b + v / n and their crossing point.
double bound_curve(double b, double v, double n);
double crossing_point(double b_gen, double v_gen, double b_dis, double v_dis);

}  // namespace jescore::biasvar
