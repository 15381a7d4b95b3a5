#include "jescore/adversarial.hpp"

#include <algorithm>
#include <cmath>

#include "jescore/errors.hpp"
#include "jescore/trainer.hpp"

namespace jescore::adv {

void AttackConfig::validate() const {
  if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
  if (steps < 1) throw ConfigError("attack: steps must be >= 1");
  if (step_size < 0) throw ConfigError("attack: step_size must be >= 0");
  if (sigma_eval < 0) throw ConfigError("attack: sigma_eval must be >= 0");
}

LossGradFn model_ce_gradient(const nn::JointModel& m) {
  return [&m](const Tensor& images, const std::vector<uint16_t>& labels1) {
    ad::Tape t;
    nn::JointGraph g = nn::joint_graph(t, m, images, true, false);
    const int classes = m.num_classes();
    nn::check_labels(labels1, classes, images.dim(0));
    std::vector<int> idx(labels1.size());
    for (size_t i = 0; i < labels1.size(); ++i) idx[i] = labels1[i] - 1;
    ad::Var picked = ad::take_class(t, g.log_class_cond, std::move(idx));
    ad::Var loss = ad::neg(t, ad::sum_all(t, picked));
    return t.value(t.grad1(loss, g.input));
  };
}

namespace {

double row_norm(const Tensor& t, int64_t row, int64_t rlen) {
  double s = 0;
  for (int64_t i = row * rlen; i < (row + 1) * rlen; ++i) s += t.at(i) * t.at(i);
  return std::sqrt(s);
}

void project_row(Tensor& adv, const Tensor& clean, int64_t row, int64_t rlen,
                 AttackConfig::Norm norm, double eps) {
  if (norm == AttackConfig::Norm::linf) {
    for (int64_t i = row * rlen; i < (row + 1) * rlen; ++i) {
      double delta = std::clamp(adv.at(i) - clean.at(i), -eps, eps);
      adv.set(i, std::clamp(clean.at(i) + delta, 0.0, 255.0));
    }
  } else {
    double n = 0;
    for (int64_t i = row * rlen; i < (row + 1) * rlen; ++i) {
      double d = adv.at(i) - clean.at(i);
      n += d * d;
    }
    n = std::sqrt(n);
    const double shrink = n > eps && n > 0 ? eps / n : 1.0;
    for (int64_t i = row * rlen; i < (row + 1) * rlen; ++i) {
      double d = (adv.at(i) - clean.at(i)) * shrink;
      adv.set(i, std::clamp(clean.at(i) + d, 0.0, 255.0));
    }
  }
}

}  // namespace

Tensor pgd(const LossGradFn& grad_fn, const Tensor& images,
           const std::vector<uint16_t>& labels1, const AttackConfig& cfg) {
  cfg.validate();
  if (images.rank() != 4) throw UsageError("pgd: NCHW images required");
  const int64_t n = images.dim(0);
  const int64_t rlen = images.numel() / n;
  if (static_cast<int64_t>(labels1.size()) != n)
    throw UsageError("pgd: one label per sample required");

  Tensor adv = images.clone();
  if (cfg.epsilon == 0) return adv;
  Rng rng = Rng(cfg.seed).fork("pgd-start");

  if (cfg.random_start) {
    if (cfg.norm == AttackConfig::Norm::linf) {
      for (int64_t i = 0; i < adv.numel(); ++i)
        adv.set(i, adv.at(i) + rng.uniform(-cfg.epsilon, cfg.epsilon));
    } else {
      // Uniform in the l2 ball: gaussian direction, radius by d-th root.
      for (int64_t r = 0; r < n; ++r) {
        std::vector<double> dir(static_cast<size_t>(rlen));
        double norm = 0;
        for (auto& v : dir) {
          v = rng.normal();
          norm += v * v;
        }
        norm = std::sqrt(norm);
        const double radius =
            cfg.epsilon * std::pow(rng.uniform01(), 1.0 / static_cast<double>(rlen));
        for (int64_t i = 0; i < rlen; ++i)
          adv.set(r * rlen + i, adv.at(r * rlen + i) + radius * dir[static_cast<size_t>(i)] / norm);
      }
    }
    for (int64_t r = 0; r < n; ++r) project_row(adv, images, r, rlen, cfg.norm, cfg.epsilon);
  }

  Rng noise_rng = Rng(cfg.seed).fork("pgd-noise");
  const double alpha = cfg.effective_step();
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor probe = adv;
    if (cfg.sigma_eval > 0) {
      auto [noisy, eps] = data::add_noise(adv, cfg.sigma_eval, noise_rng);
      probe = std::move(noisy);
    }
    Tensor grad = grad_fn(probe, labels1);
    if (cfg.norm == AttackConfig::Norm::linf) {
      for (int64_t i = 0; i < adv.numel(); ++i) {
        double g = grad.at(i);
        adv.set(i, adv.at(i) + alpha * (g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0)));
      }
    } else {
      for (int64_t r = 0; r < n; ++r) {
        const double gn = row_norm(grad, r, rlen);
        if (gn == 0) continue;
        for (int64_t i = r * rlen; i < (r + 1) * rlen; ++i)
          adv.set(i, adv.at(i) + alpha * grad.at(i) / gn);
      }
    }
    for (int64_t r = 0; r < n; ++r) project_row(adv, images, r, rlen, cfg.norm, cfg.epsilon);
  }
  return adv;
}

std::vector<CurveRow> robust_accuracy_curve(const nn::JointModel& m, const data::Dataset& ds,
                                            AttackConfig::Norm norm,
                                            const std::vector<double>& epsilon_grid,
                                            const AttackConfig& base, int64_t max_samples) {
  int64_t n = ds.count();
  if (max_samples > 0) n = std::min(n, max_samples);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  data::ImageBatch batch = ds.select(idx);
  Tensor images = batch.images.dtype() == m.dtype() ? batch.images
                                                    : batch.images.astype(m.dtype());
  LossGradFn grad_fn = model_ce_gradient(m);

  std::vector<CurveRow> rows;
  for (double eps : epsilon_grid) {
    AttackConfig cfg = base;
    cfg.norm = norm;
    cfg.epsilon = eps;
    Tensor adv = pgd(grad_fn, images, batch.labels, cfg);
    auto pred = nn::predict(m, adv);
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == batch.labels[i]) ++correct;
    rows.push_back({eps, static_cast<double>(correct) / static_cast<double>(n), n, cfg.seed});
  }
  return rows;
}

std::vector<SweepRow> adversarial_gradient_sweep(const nn::JointModel& m, const Tensor& y,
                                                 uint16_t class1,
                                                 const std::vector<double>& sigma_grid) {
  Shape img_shape = y.shape();
  if (img_shape.size() == 3) img_shape.insert(img_shape.begin(), 1);
  Tensor img = y.clone().reshaped(img_shape);
  std::vector<uint16_t> labels{class1};
  Tensor direct = nn::adversarial_gradient(m, img, labels);
  double dnorm = 0;
  for (int64_t i = 0; i < direct.numel(); ++i) dnorm += direct.at(i) * direct.at(i);
  dnorm = std::sqrt(dnorm);

  std::vector<SweepRow> rows;
  for (double sigma : sigma_grid) {
    if (!(sigma > 0)) throw UsageError("sweep: sigma grid must be positive");
    Tensor via = nn::adversarial_gradient_via_denoisers(m, img, labels, sigma);
    double gap = 0, scale = std::max(dnorm, 1e-300);
    for (int64_t i = 0; i < via.numel(); ++i) {
      double delta = via.at(i) - direct.at(i);
      gap += delta * delta;
    }
    rows.push_back({sigma, dnorm, std::sqrt(gap) / scale});
  }
  return rows;
}

}  // namespace jescore::adv
