#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "jescore/data.hpp"
#include "jescore/rng.hpp"
#include "jescore/tensor.hpp"

namespace jescore::gmm {

/// Gaussian mixture over images with isotropic per-class covariance. All
/// conditionals, marginals, scores and posterior means under additive
/// Gaussian noise have closed forms, which makes this the reference world for
/// checking learned models.
struct GmmSpec {
  std::vector<double> priors;        // sum to 1
  std::vector<Tensor> means;         // per class, [C,H,W], f64
  std::vector<double> taus;          // per-class pixel standard deviation
  Shape image_shape;                 // {C, H, W}

  int classes() const { return static_cast<int>(priors.size()); }
  int64_t dim() const { return shape_numel(image_shape); }
  void validate() const;
};

/// Deterministic smooth mean patterns (opposite-phase cosines per class)
/// around a mid-gray offset; convenient for synthetic worlds.
GmmSpec make_cosine_spec(int classes, Shape image_shape, double amplitude, double offset,
                         double tau);

data::Dataset gmm_sample(const GmmSpec& g, int64_t n, Rng& rng);

// All oracle functions take a single image (shape image_shape or flat [d])
// in any dtype and compute in double precision.

/// Exact normalized log-density of the sigma-noisy marginal, sigma >= 0.
double log_density_noisy(const GmmSpec& g, const Tensor& y, double sigma);
/// Class log-posterior under the sigma-noisy joint (normalized), sigma >= 0.
std::vector<double> log_class_posterior(const GmmSpec& g, const Tensor& y, double sigma);
/// Score of the noisy marginal, sigma > 0.
Tensor score_noisy(const GmmSpec& g, const Tensor& y, double sigma);
/// E[x | y] under the noisy marginal, sigma > 0.
Tensor posterior_mean(const GmmSpec& g, const Tensor& y, double sigma);
/// E[x | y, c] for a 1-based class, sigma > 0.
Tensor posterior_mean_cond(const GmmSpec& g, const Tensor& y, int class1, double sigma);

/// Maximum-posterior class at sigma = 0, 1-based.
int bayes_class(const GmmSpec& g, const Tensor& x);
/// Monte-Carlo estimate of the accuracy of the Bayes classifier on clean
/// draws from the mixture.
double bayes_accuracy(const GmmSpec& g, int64_t mc_n, Rng& rng);

/// Batch posterior-mean denoising of NCHW noisy images (f64 output).
Tensor posterior_mean_batch(const GmmSpec& g, const Tensor& noisy, double sigma);

void save_spec(const GmmSpec& g, const std::filesystem::path& path);
GmmSpec load_spec(const std::filesystem::path& path);

}  // namespace jescore::gmm
