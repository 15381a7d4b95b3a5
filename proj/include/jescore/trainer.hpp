#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jescore/data.hpp"
#include "jescore/joint_head.hpp"
#include "jescore/tensor.hpp"

namespace jescore::train {

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t iterations = 0;
  int batch_classification = 128;
  int batch_denoising = 64;
  data::NoiseSchedule schedule_classification{1.0, 20.0};
  data::NoiseSchedule schedule_denoising{1.0, 100.0};
  enum class DsmVariant { unconditional, conditional };
  DsmVariant dsm_variant = DsmVariant::unconditional;
  /// classification_only drops the denoising term; used for baselines in
  /// robustness comparisons.
  enum class Objective { joint, classification_only };
  Objective objective = Objective::joint;
  uint64_t seed = 0;
  int crop_pad = 4;
  int64_t metrics_every = 10;
  int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  bool deterministic = false;

  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  int64_t step = 0;
};

OptimizerState init_optimizer(const std::vector<Tensor>& params);

/// Decoupled-weight-decay Adam: parameters are shrunk by lr*wd first, then
/// moved by the bias-corrected moment update.
void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, double lr_t, const TrainConfig& cfg);

/// lr_max * (1 + cos(pi t / T)) / 2, annealing to zero without warm-up.
double cosine_lr(int64_t t, int64_t total, double lr_max);

// ---------------------------------------------------------------------------
// Losses. Each builds nodes on the caller's tape so gradients of the total
// flow through both heads.
// ---------------------------------------------------------------------------

/// Mean over the batch of -log p(c|y) at the true labels.
ad::Var ce_loss_graph(ad::Tape& t, const nn::JointGraph& g,
                      const std::vector<uint16_t>& labels1);

/// Mean over the batch of |sigma * score + eps|^2 / pixel_count. The score
/// is the input-gradient of the summed marginal (or joint, for the
/// conditional variant) log-density, differentiable in the parameters.
ad::Var dsm_loss_graph(ad::Tape& t, const nn::JointGraph& g,
                       const std::vector<double>& sigma_per_sample, const Tensor& eps,
                       TrainConfig::DsmVariant variant,
                       const std::vector<uint16_t>& labels1);

struct IterMetrics {
  int64_t iteration = 0;
  double lr = 0;
  double ce_loss = 0;
  double dsm_loss = 0;
  double grad_norm = 0;
  double wall_time_s = 0;
};

struct TrainHooks {
  std::function<void(const IterMetrics&)> on_metrics;
  std::function<void(const nn::JointModel&, const OptimizerState&, int64_t iteration,
                     bool diagnostic)>
      on_checkpoint;
};

struct TrainReport {
  int64_t iterations_run = 0;
  std::vector<IterMetrics> trace;  // every metrics_every iterations
};

/// Joint training loop. Each iteration draws an independent classification
/// batch (flip + padded crop + sigma <= sigma_max_cls noise) and denoising
/// batch (flip only + denoising-schedule noise), sums both losses, and takes
/// one optimizer step. All randomness is derived from (seed, iteration), so
/// runs are reproducible and resume exactly. NaN losses abort with a
/// diagnostic checkpoint.
TrainReport train(nn::JointModel& model, const data::Dataset& trainset, const TrainConfig& cfg,
                  OptimizerState& opt, int64_t start_iteration = 0, TrainHooks hooks = {});

/// Classification accuracy of the model on clean images.
double accuracy(const nn::JointModel& model, const data::Dataset& ds, int64_t max_samples = 0);

}  // namespace jescore::train
