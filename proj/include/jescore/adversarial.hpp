#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "jescore/data.hpp"
#include "jescore/joint_head.hpp"
#include "jescore/tensor.hpp"

namespace jescore::adv {

struct AttackConfig {
  enum class Norm { linf, l2 };
  Norm norm = Norm::linf;
  double epsilon = 0;          // 0..255 pixel scale
  int steps = 40;
  double step_size = 0;        // 0 selects 2.5 * epsilon / steps
  bool random_start = true;
  double sigma_eval = 0;       // noise level at which gradients are taken
  uint64_t seed = 0;

  void validate() const;
  double effective_step() const { return step_size > 0 ? step_size : 2.5 * epsilon / steps; }
};

/// Gradient of the summed per-sample cross-entropy at the true labels with
/// respect to the images. Summation keeps per-sample gradients independent.
using LossGradFn =
    std::function<Tensor(const Tensor& images, const std::vector<uint16_t>& labels1)>;

LossGradFn model_ce_gradient(const nn::JointModel& m);

/// Projected gradient ascent on the classification loss: sign steps for the
/// l-inf ball, normalized steps for the l2 ball, projection to the
/// epsilon-ball around the clean input and clipping to [0, 255] after every
/// step. With sigma_eval > 0 each gradient is taken on a freshly noised copy.
Tensor pgd(const LossGradFn& grad_fn, const Tensor& images,
           const std::vector<uint16_t>& labels1, const AttackConfig& cfg);

struct CurveRow {
  double epsilon = 0;
  double accuracy = 0;
  int64_t n = 0;
  uint64_t seed = 0;
};

std::vector<CurveRow> robust_accuracy_curve(const nn::JointModel& m, const data::Dataset& ds,
                                            AttackConfig::Norm norm,
                                            const std::vector<double>& epsilon_grid,
                                            const AttackConfig& base,
                                            int64_t max_samples = 0);

struct SweepRow {
  double sigma = 0;
  double gradient_norm = 0;
  double denoiser_path_gap = 0;  // relative gap between the two computations
};

/// |adversarial gradient| per noise level, with the denoiser-difference
/// cross-check evaluated at each sigma.
std::vector<SweepRow> adversarial_gradient_sweep(const nn::JointModel& m, const Tensor& y,
                                                 uint16_t class1,
                                                 const std::vector<double>& sigma_grid);

}  // namespace jescore::adv
