#include "jescore/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "jescore/errors.hpp"
#include "jescore/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace jescore::train {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (iterations < 1) throw ConfigError("train: iterations must be positive");
  if (batch_classification < 1 || batch_denoising < 1)
    throw ConfigError("train: batch sizes must be positive");
  if (crop_pad < 0) throw ConfigError("train: crop_pad must be >= 0");
  if (metrics_every < 1) throw ConfigError("train: metrics_every must be positive");
  schedule_classification.validate();
  schedule_denoising.validate();
}

OptimizerState init_optimizer(const std::vector<Tensor>& params) {
  OptimizerState s;
  s.first_moment.reserve(params.size());
  s.second_moment.reserve(params.size());
  for (const Tensor& p : params) {
    s.first_moment.push_back(Tensor::zeros(p.shape(), p.dtype()));
    s.second_moment.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
  return s;
}

namespace {

template <class T>
void adamw_span(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v,
                double lr_t, double bc1, double bc2, const TrainConfig& cfg) {
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T decay = static_cast<T>(1.0 - lr_t * cfg.weight_decay);
  const T eps = static_cast<T>(cfg.adam_eps);
  const T step = static_cast<T>(lr_t);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] *= decay;
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    const T mhat = m[i] * inv_bc1;
    const T vhat = v[i] * inv_bc2;
    p[i] -= step * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, double lr_t, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw UsageError("adamw: parameter/gradient/state count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) throw UsageError("adamw: gradient shape mismatch");
    if (params[i].dtype() == DType::f32)
      adamw_span<float>(params[i].data<float>(), grads[i].data<float>(),
                        state.first_moment[i].data<float>(),
                        state.second_moment[i].data<float>(), lr_t, bc1, bc2, cfg);
    else
      adamw_span<double>(params[i].data<double>(), grads[i].data<double>(),
                         state.first_moment[i].data<double>(),
                         state.second_moment[i].data<double>(), lr_t, bc1, bc2, cfg);
  }
}

double cosine_lr(int64_t t, int64_t total, double lr_max) {
  if (total < 1) throw UsageError("cosine_lr: total iterations must be positive");
  if (t < 0 || t > total) throw UsageError("cosine_lr: step out of range");
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                                        static_cast<double>(total)));
}

ad::Var ce_loss_graph(ad::Tape& t, const nn::JointGraph& g,
                      const std::vector<uint16_t>& labels1) {
  const int64_t n = t.shape(g.log_class_cond)[0];
  const int classes = static_cast<int>(t.shape(g.log_class_cond)[1]);
  nn::check_labels(labels1, classes, n);
  std::vector<int> idx(labels1.size());
  for (size_t i = 0; i < labels1.size(); ++i) idx[i] = labels1[i] - 1;
  ad::Var picked = ad::take_class(t, g.log_class_cond, std::move(idx));
  return ad::scale(t, ad::sum_all(t, picked), -1.0 / static_cast<double>(n));
}

ad::Var dsm_loss_graph(ad::Tape& t, const nn::JointGraph& g,
                       const std::vector<double>& sigma_per_sample, const Tensor& eps,
                       TrainConfig::DsmVariant variant,
                       const std::vector<uint16_t>& labels1) {
  const Shape& in_shape = t.shape(g.input);
  const int64_t n = in_shape[0];
  if (static_cast<int64_t>(sigma_per_sample.size()) != n)
    throw UsageError("dsm: one sigma per sample required");
  if (!t.requires_grad(g.input)) throw UsageError("dsm: input must be differentiable");
  if (!eps.defined() || eps.shape() != in_shape)
    throw UsageError("dsm: noise tensor must match the input shape");

  ad::Var scalar;
  if (variant == TrainConfig::DsmVariant::unconditional) {
    scalar = ad::sum_all(t, g.log_marginal);
  } else {
    scalar = ad::sum_all(t, nn::log_joint_graph(t, g, labels1));
  }
  ad::Var score = t.grad1(scalar, g.input);

  Tensor sig = Tensor::zeros({n}, t.dtype(g.input));
  for (int64_t i = 0; i < n; ++i) sig.set(i, sigma_per_sample[static_cast<size_t>(i)]);
  ad::Var residual = ad::add(t, ad::row_scale(t, score, t.constant(sig)), t.constant(eps));
  const double pixels = static_cast<double>(shape_numel(in_shape) / n);
  return ad::scale(t, ad::sumsq(t, residual), 1.0 / (static_cast<double>(n) * pixels));
}

namespace {

struct BatchPlan {
  data::ImageBatch batch;
  std::vector<double> sigmas;
  Tensor noisy;
  Tensor eps;
};

std::vector<int64_t> iteration_indices(const Rng& root, const char* stream, int64_t iteration,
                                       int64_t batch, int64_t dataset_n) {
  // Epoch-shuffled without replacement; a partial tail batch wraps around.
  const int64_t per_epoch = std::max<int64_t>(dataset_n / batch, 1);
  const int64_t epoch = iteration / per_epoch;
  const int64_t slot = iteration % per_epoch;
  Rng r = root.fork(stream, static_cast<uint64_t>(epoch));
  std::vector<int64_t> perm = r.permutation(dataset_n);
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i)
    out.push_back(perm[static_cast<size_t>((slot * batch + i) % dataset_n)]);
  return out;
}

BatchPlan classification_batch(const data::Dataset& ds, const TrainConfig& cfg,
                               int64_t iteration) {
  Rng root(cfg.seed);
  BatchPlan plan;
  plan.batch = ds.select(iteration_indices(root, "cls-epoch", iteration,
                                           cfg.batch_classification, ds.count()));
  Rng aug = root.fork("cls-aug", static_cast<uint64_t>(iteration));
  Tensor x = data::random_hflip(plan.batch.images, aug);
  x = data::padded_random_crop(x, cfg.crop_pad, aug);
  Rng nrng = root.fork("cls-noise", static_cast<uint64_t>(iteration));
  plan.sigmas.resize(static_cast<size_t>(cfg.batch_classification));
  for (auto& s : plan.sigmas) s = cfg.schedule_classification.draw(nrng);
  auto [noisy, eps] = data::add_noise_per_sample(x, plan.sigmas, nrng);
  plan.noisy = std::move(noisy);
  plan.eps = std::move(eps);
  return plan;
}

BatchPlan denoising_batch(const data::Dataset& ds, const TrainConfig& cfg, int64_t iteration) {
  Rng root(cfg.seed);
  BatchPlan plan;
  plan.batch = ds.select(iteration_indices(root, "den-epoch", iteration, cfg.batch_denoising,
                                           ds.count()));
  Rng aug = root.fork("den-aug", static_cast<uint64_t>(iteration));
  Tensor x = data::random_hflip(plan.batch.images, aug);
  Rng nrng = root.fork("den-noise", static_cast<uint64_t>(iteration));
  plan.sigmas.resize(static_cast<size_t>(cfg.batch_denoising));
  for (auto& s : plan.sigmas) s = cfg.schedule_denoising.draw(nrng);
  auto [noisy, eps] = data::add_noise_per_sample(x, plan.sigmas, nrng);
  plan.noisy = std::move(noisy);
  plan.eps = std::move(eps);
  return plan;
}

double squared_norm(const Tensor& g) {
  if (g.dtype() == DType::f32)
    return kernels::vdot<float>(g.data<float>().data(), g.data<float>().data(),
                                static_cast<size_t>(g.numel()));
  return kernels::vdot<double>(g.data<double>().data(), g.data<double>().data(),
                               static_cast<size_t>(g.numel()));
}

}  // namespace

TrainReport train(nn::JointModel& model, const data::Dataset& trainset, const TrainConfig& cfg,
                  OptimizerState& opt, int64_t start_iteration, TrainHooks hooks) {
  cfg.validate();
  model.validate();
  trainset.batch.validate(trainset.num_classes);
  if (trainset.num_classes != model.num_classes())
    throw ConfigError("train: dataset class count does not match the model");
  if (trainset.batch.images.dtype() != model.dtype())
    throw ConfigError("train: dataset dtype does not match the model");

#ifdef _OPENMP
  if (cfg.deterministic) omp_set_num_threads(1);
#endif

  // Parameter order matches BoundJoint: net parameters, then W, then w.
  std::vector<Tensor*> params;
  for (Tensor& p : model.net.params) params.push_back(&p);
  params.push_back(&model.head.W);
  params.push_back(&model.head.w);
  if (opt.first_moment.empty()) {
    std::vector<Tensor> snapshot;
    for (Tensor* p : params) snapshot.push_back(*p);
    opt = init_optimizer(snapshot);
  }

  TrainReport report;
  const auto t0 = std::chrono::steady_clock::now();

  for (int64_t it = start_iteration; it < cfg.iterations; ++it) {
    BatchPlan cls = classification_batch(trainset, cfg, it);
    BatchPlan den = denoising_batch(trainset, cfg, it);

    ad::Tape tape;
    nn::BoundJoint bound = nn::bind_joint(tape, model, true);
    nn::JointGraph gc = nn::joint_graph_with(tape, model, bound, cls.noisy, false);
    ad::Var ce = ce_loss_graph(tape, gc, cls.batch.labels);
    ad::Var total = ce;
    ad::Var dsm{};
    if (cfg.objective == TrainConfig::Objective::joint) {
      nn::JointGraph gd = nn::joint_graph_with(tape, model, bound, den.noisy, true);
      dsm = dsm_loss_graph(tape, gd, den.sigmas, den.eps, cfg.dsm_variant, den.batch.labels);
      total = ad::add(tape, ce, dsm);
    }

    std::vector<ad::Var> grads = tape.grad(total, gc.all_params);

    const double ce_v = tape.value(ce).item();
    const double dsm_v = dsm.valid() ? tape.value(dsm).item() : 0.0;
    if (!std::isfinite(ce_v) || !std::isfinite(dsm_v)) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(model, opt, it, true);
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(it));
    }

    std::vector<Tensor> grad_values;
    grad_values.reserve(params.size());
    double grad_norm_sq = 0;
    for (ad::Var g : grads) {
      Tensor gv = tape.value(g);
      grad_norm_sq += squared_norm(gv);
      grad_values.push_back(std::move(gv));
    }

    const double lr_t = cosine_lr(it, cfg.iterations, cfg.lr);
    std::vector<Tensor> owned;
    owned.reserve(params.size());
    for (Tensor* p : params) owned.push_back(*p);
    adamw_step(owned, grad_values, opt, lr_t, cfg);
    for (size_t i = 0; i < params.size(); ++i) *params[i] = owned[i];

    if ((it + 1) % cfg.metrics_every == 0 || it + 1 == cfg.iterations) {
      IterMetrics m;
      m.iteration = it + 1;
      m.lr = lr_t;
      m.ce_loss = ce_v;
      m.dsm_loss = dsm_v;
      m.grad_norm = std::sqrt(grad_norm_sq);
      m.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      report.trace.push_back(m);
      if (hooks.on_metrics) hooks.on_metrics(m);
    }
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
        ((it + 1) % cfg.checkpoint_every == 0 || it + 1 == cfg.iterations)) {
      hooks.on_checkpoint(model, opt, it + 1, false);
    }
    report.iterations_run = it + 1 - start_iteration;
  }
  return report;
}

double accuracy(const nn::JointModel& model, const data::Dataset& ds, int64_t max_samples) {
  int64_t n = ds.count();
  if (max_samples > 0) n = std::min(n, max_samples);
  if (n < 1) throw UsageError("accuracy: empty dataset");
  int64_t correct = 0;
  const int64_t chunk = 64;
  for (int64_t off = 0; off < n; off += chunk) {
    std::vector<int64_t> idx;
    for (int64_t i = off; i < std::min(n, off + chunk); ++i) idx.push_back(i);
    data::ImageBatch b = ds.select(idx);
    Tensor images = b.images.dtype() == model.dtype() ? b.images : b.images.astype(model.dtype());
    auto pred = nn::predict(model, images);
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == b.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace jescore::train
