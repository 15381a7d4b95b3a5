#pragma once

#include <cstdint>
#include <vector>

#include "jescore/gradresnet.hpp"
#include "jescore/tape.hpp"
#include "jescore/tensor.hpp"

namespace jescore::nn {

/// Task heads on top of the pooled features: class logits are linear in the
/// features (W, one row per class) and the unnormalized marginal log-density
/// is quadratic, -(w.f)^2 / 2. The parameter-dependent normalizer is dropped
/// everywhere since no derived quantity depends on it.
struct HeadParams {
  Tensor W;  // [C, K]
  Tensor w;  // [K]
};

struct JointModel {
  FeatureNet net;
  HeadParams head;

  int num_classes() const { return static_cast<int>(head.W.dim(0)); }
  int feature_dim() const { return static_cast<int>(head.W.dim(1)); }
  DType dtype() const { return head.W.dtype(); }
  JointModel astype(DType dt) const;
  void validate() const;
};

JointModel build_joint_model(const ArchConfig& config, int classes, uint64_t seed,
                             DType dt = DType::f32);

/// One network evaluation bound to a tape: forward pass plus both heads.
struct JointGraph {
  ad::Var input;           // [N, C, H, W]
  ad::Var feats;           // [N, K]
  ad::Var logits;          // [N, C]
  ad::Var log_class_cond;  // [N, C], rows are normalized log-probabilities
  ad::Var log_marginal;    // [N], unnormalized
  BoundNet net;
  ad::Var W, w;
  std::vector<ad::Var> all_params;
};

JointGraph joint_graph(ad::Tape& tape, const JointModel& m, const Tensor& images,
                       bool input_requires_grad, bool params_require_grad);

/// Parameters registered once on a tape, reusable across several forward
/// evaluations (e.g. separate classification and denoising branches).
struct BoundJoint {
  BoundNet net;
  ad::Var W, w;
};
BoundJoint bind_joint(ad::Tape& tape, const JointModel& m, bool requires_grad);
JointGraph joint_graph_with(ad::Tape& tape, const JointModel& m, const BoundJoint& bound,
                            const Tensor& images, bool input_requires_grad);
/// Variant that consumes an existing input var (e.g. a perturbed leaf owned
/// by a finite-difference driver).
JointGraph joint_graph_on(ad::Tape& tape, const JointModel& m, const BoundJoint& bound,
                          ad::Var input);

/// Per-sample log p(y, c) (unnormalized) for 1-based labels, on the tape.
ad::Var log_joint_graph(ad::Tape& tape, const JointGraph& g,
                        const std::vector<uint16_t>& labels1);

// Convenience evaluations on fresh tapes. Labels are 1-based and validated.
Tensor log_class_cond(const JointModel& m, const Tensor& images);             // [N, C]
Tensor log_marginal(const JointModel& m, const Tensor& images);               // [N]
Tensor log_joint(const JointModel& m, const Tensor& images,
                 const std::vector<uint16_t>& labels1);                       // [N]
std::vector<uint16_t> predict(const JointModel& m, const Tensor& images);     // 1-based

/// Input-gradient of the summed unnormalized marginal log-density; row n is
/// the score of sample n.
Tensor score_marginal(const JointModel& m, const Tensor& images);
Tensor score_conditional(const JointModel& m, const Tensor& images,
                         const std::vector<uint16_t>& labels1);

/// Posterior-mean estimate y + sigma^2 * score, no clipping. sigma > 0.
Tensor denoise_uncond(const JointModel& m, const Tensor& images, double sigma);
Tensor denoise_cond(const JointModel& m, const Tensor& images,
                    const std::vector<uint16_t>& labels1, double sigma);

/// Input-gradient of log p(c|y), computed directly from the class head.
Tensor adversarial_gradient(const JointModel& m, const Tensor& images,
                            const std::vector<uint16_t>& labels1);
/// Same quantity via (denoise_cond - denoise_uncond) / sigma^2; agrees with
/// the direct path up to floating-point error.
Tensor adversarial_gradient_via_denoisers(const JointModel& m, const Tensor& images,
                                          const std::vector<uint16_t>& labels1, double sigma);

/// Central-difference Hessian-vector product of a tape-built scalar function,
/// evaluated in the tensor's own precision. Step 1e-3 / |v|.
Tensor hvp(const std::function<ad::Var(ad::Tape&, ad::Var)>& scalar_fn, const Tensor& at,
           const Tensor& v);

void check_labels(const std::vector<uint16_t>& labels1, int classes, int64_t batch);

}  // namespace jescore::nn
