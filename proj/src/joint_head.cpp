#include "jescore/joint_head.hpp"

#include <cmath>

#include "jescore/errors.hpp"
#include "jescore/rng.hpp"

namespace jescore::nn {

namespace {

std::vector<int> to_index0(const std::vector<uint16_t>& labels1) {
  std::vector<int> idx(labels1.size());
  for (size_t i = 0; i < labels1.size(); ++i) idx[i] = static_cast<int>(labels1[i]) - 1;
  return idx;
}

Tensor uniform_tensor(Shape shape, double bound, Rng rng, DType dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-bound, bound));
  return t;
}

}  // namespace

void check_labels(const std::vector<uint16_t>& labels1, int classes, int64_t batch) {
  if (static_cast<int64_t>(labels1.size()) != batch)
    throw UsageError("labels: count must match batch size");
  for (uint16_t c : labels1)
    if (c < 1 || c > classes) throw UsageError("labels: class index out of [1..C]");
}

void JointModel::validate() const {
  net.config.validate();
  if (head.W.rank() != 2 || head.w.rank() != 1)
    throw ConfigError("head: W must be [C,K] and w must be [K]");
  if (num_classes() < 2) throw ConfigError("head: at least 2 classes required");
  if (head.W.dim(1) != head.w.dim(0) || head.W.dim(1) != net.config.feature_dim)
    throw ConfigError("head: feature dimension mismatch between net and head");
  if (!head.W.all_finite() || !head.w.all_finite())
    throw ConfigError("head: parameters must be finite");
}

JointModel JointModel::astype(DType dt) const {
  JointModel out;
  out.net = net.astype(dt);
  out.head.W = head.W.astype(dt);
  out.head.w = head.w.astype(dt);
  return out;
}

JointModel build_joint_model(const ArchConfig& config, int classes, uint64_t seed, DType dt) {
  if (classes < 2) throw ConfigError("build: at least 2 classes required");
  JointModel m;
  m.net = build_feature_net(config, seed, dt);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.feature_dim));
  Rng root(seed);
  m.head.W = uniform_tensor({classes, config.feature_dim}, bound, root.fork("head.W"), dt);
  m.head.w = uniform_tensor({config.feature_dim}, bound, root.fork("head.w"), dt);
  m.validate();
  return m;
}

BoundJoint bind_joint(ad::Tape& t, const JointModel& m, bool requires_grad) {
  BoundJoint b;
  b.net = bind(t, m.net, requires_grad);
  b.W = t.leaf(m.head.W, requires_grad);
  b.w = t.leaf(m.head.w, requires_grad);
  return b;
}

JointGraph joint_graph(ad::Tape& t, const JointModel& m, const Tensor& images,
                       bool input_requires_grad, bool params_require_grad) {
  return joint_graph_with(t, m, bind_joint(t, m, params_require_grad), images,
                          input_requires_grad);
}

JointGraph joint_graph_with(ad::Tape& t, const JointModel& m, const BoundJoint& bound,
                            const Tensor& images, bool input_requires_grad) {
  if (images.dtype() != m.dtype()) throw UsageError("joint_graph: image/model dtype mismatch");
  return joint_graph_on(t, m, bound, t.leaf(images, input_requires_grad));
}

JointGraph joint_graph_on(ad::Tape& t, const JointModel& m, const BoundJoint& bound,
                          ad::Var input) {
  if (t.dtype(input) != m.dtype()) throw UsageError("joint_graph: image/model dtype mismatch");
  JointGraph g;
  g.input = input;
  g.net = bound.net;
  g.W = bound.W;
  g.w = bound.w;
  g.feats = features(t, g.net, g.input);
  g.logits = ad::matmul_nt(t, g.feats, g.W);  // [N, C]
  ad::Var lse = ad::logsumexp_rows(t, g.logits);
  g.log_class_cond = ad::sub(t, g.logits, ad::row_broadcast(t, lse, t.shape(g.logits)[1]));
  // -(w.f)^2 / 2 per sample
  ad::Var wf = ad::matmul_nt(t, g.feats, ad::reshape(t, g.w, {1, t.shape(g.w)[0]}));  // [N,1]
  ad::Var wf_flat = ad::reshape(t, wf, {t.shape(wf)[0]});
  g.log_marginal = ad::scale(t, ad::mul(t, wf_flat, wf_flat), -0.5);
  g.all_params = g.net.params;
  g.all_params.push_back(g.W);
  g.all_params.push_back(g.w);
  return g;
}

ad::Var log_joint_graph(ad::Tape& t, const JointGraph& g,
                        const std::vector<uint16_t>& labels1) {
  const int classes = static_cast<int>(t.shape(g.logits)[1]);
  check_labels(labels1, classes, t.shape(g.logits)[0]);
  ad::Var cond = ad::take_class(t, g.log_class_cond, to_index0(labels1));
  return ad::add(t, g.log_marginal, cond);
}

Tensor log_class_cond(const JointModel& m, const Tensor& images) {
  ad::Tape t;
  return t.value(joint_graph(t, m, images, false, false).log_class_cond);
}

Tensor log_marginal(const JointModel& m, const Tensor& images) {
  ad::Tape t;
  return t.value(joint_graph(t, m, images, false, false).log_marginal);
}

Tensor log_joint(const JointModel& m, const Tensor& images,
                 const std::vector<uint16_t>& labels1) {
  ad::Tape t;
  JointGraph g = joint_graph(t, m, images, false, false);
  return t.value(log_joint_graph(t, g, labels1));
}

std::vector<uint16_t> predict(const JointModel& m, const Tensor& images) {
  Tensor lc = log_class_cond(m, images);
  const int64_t n = lc.dim(0), c = lc.dim(1);
  std::vector<uint16_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (lc.at(i * c + j) > lc.at(i * c + best)) best = j;
    out[static_cast<size_t>(i)] = static_cast<uint16_t>(best + 1);
  }
  return out;
}

Tensor score_marginal(const JointModel& m, const Tensor& images) {
  ad::Tape t;
  JointGraph g = joint_graph(t, m, images, true, false);
  ad::Var total = ad::sum_all(t, g.log_marginal);
  return t.value(t.grad1(total, g.input));
}

Tensor score_conditional(const JointModel& m, const Tensor& images,
                         const std::vector<uint16_t>& labels1) {
  ad::Tape t;
  JointGraph g = joint_graph(t, m, images, true, false);
  ad::Var total = ad::sum_all(t, log_joint_graph(t, g, labels1));
  return t.value(t.grad1(total, g.input));
}

namespace {
Tensor apply_tweedie(const Tensor& images, const Tensor& score, double sigma) {
  if (sigma <= 0) throw UsageError("denoise: sigma must be positive");
  Tensor out = images.clone();
  const double s2 = sigma * sigma;
  for (int64_t i = 0; i < out.numel(); ++i) out.set(i, out.at(i) + s2 * score.at(i));
  return out;
}
}  // namespace

Tensor denoise_uncond(const JointModel& m, const Tensor& images, double sigma) {
  if (sigma <= 0) throw UsageError("denoise: sigma must be positive");
  return apply_tweedie(images, score_marginal(m, images), sigma);
}

Tensor denoise_cond(const JointModel& m, const Tensor& images,
                    const std::vector<uint16_t>& labels1, double sigma) {
  if (sigma <= 0) throw UsageError("denoise: sigma must be positive");
  return apply_tweedie(images, score_conditional(m, images, labels1), sigma);
}

Tensor adversarial_gradient(const JointModel& m, const Tensor& images,
                            const std::vector<uint16_t>& labels1) {
  ad::Tape t;
  JointGraph g = joint_graph(t, m, images, true, false);
  check_labels(labels1, m.num_classes(), images.dim(0));
  ad::Var picked = ad::take_class(t, g.log_class_cond, to_index0(labels1));
  ad::Var total = ad::sum_all(t, picked);
  return t.value(t.grad1(total, g.input));
}

Tensor adversarial_gradient_via_denoisers(const JointModel& m, const Tensor& images,
                                          const std::vector<uint16_t>& labels1, double sigma) {
  if (sigma <= 0) throw UsageError("adversarial_gradient: sigma must be positive");
  Tensor dc = denoise_cond(m, images, labels1, sigma);
  Tensor du = denoise_uncond(m, images, sigma);
  Tensor out = Tensor::zeros(images.shape(), images.dtype());
  const double inv_s2 = 1.0 / (sigma * sigma);
  for (int64_t i = 0; i < out.numel(); ++i) out.set(i, (dc.at(i) - du.at(i)) * inv_s2);
  return out;
}

Tensor hvp(const std::function<ad::Var(ad::Tape&, ad::Var)>& scalar_fn, const Tensor& at,
           const Tensor& v) {
  if (!v.same_shape(at)) throw UsageError("hvp: direction shape mismatch");
  double vnorm = 0;
  for (int64_t i = 0; i < v.numel(); ++i) vnorm += v.at(i) * v.at(i);
  vnorm = std::sqrt(vnorm);
  if (vnorm == 0) throw UsageError("hvp: direction must be nonzero");
  const double h = 1e-3 / vnorm;

  auto grad_at = [&](double sign) {
    Tensor shifted = at.clone();
    for (int64_t i = 0; i < shifted.numel(); ++i)
      shifted.set(i, shifted.at(i) + sign * h * v.at(i));
    ad::Tape t;
    ad::Var x = t.leaf(shifted, true);
    ad::Var s = scalar_fn(t, x);
    return t.value(t.grad1(s, x));
  };

  Tensor gp = grad_at(1.0);
  Tensor gm = grad_at(-1.0);
  Tensor out = Tensor::zeros(at.shape(), at.dtype());
  const double inv = 1.0 / (2.0 * h);
  for (int64_t i = 0; i < out.numel(); ++i) out.set(i, (gp.at(i) - gm.at(i)) * inv);
  return out;
}

}  // namespace jescore::nn
