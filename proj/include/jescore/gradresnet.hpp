#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jescore/tape.hpp"
#include "jescore/tensor.hpp"

namespace jescore::nn {

/// Backbone configuration. The defaults give the small-image network with
/// bias-free convolutions, GELU activations, one group normalization at the
/// end of each basic block, and parameter-free side connections across
/// stages. Every switch can be flipped independently to obtain the ablated
/// variants (ReLU, eval-mode batch norm, biases, no side connections).
struct ArchConfig {
  enum class Activation { gelu, relu };
  enum class Norm { groupnorm_biasfree, batchnorm_eval, none };
  enum class FirstConv { k3s1, k7s2 };

  int input_channels = 3;
  std::vector<int> stage_channels{64, 128, 256, 512};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  int feature_dim = 512;
  Activation activation = Activation::gelu;
  Norm norm = Norm::groupnorm_biasfree;
  int groups = 8;
  bool biases = false;
  bool side_connections = true;
  FirstConv first_conv = FirstConv::k3s1;
  bool maxpool = false;
  double norm_eps = 1e-5;

  void validate() const;
  /// True when the forward map is positively homogeneous of degree one
  /// (relu activation, no normalization, no biases).
  bool homogeneity_eligible() const {
    return activation == Activation::relu && norm == Norm::none && !biases;
  }
};

/// Feature network f: images -> R^K with named parameters in a stable order.
struct FeatureNet {
  ArchConfig config;
  std::vector<std::string> param_names;
  std::vector<Tensor> params;

  DType dtype() const { return params.empty() ? DType::f32 : params.front().dtype(); }
  int64_t param_count() const;
  int param_index(const std::string& name) const;
  FeatureNet astype(DType dt) const;
};

/// Deterministic construction: fan-in-scaled uniform conv weights, unit
/// gains, zero biases, each drawn from a stream keyed by the parameter name.
FeatureNet build_feature_net(const ArchConfig& config, uint64_t seed, DType dt = DType::f32);

/// Network parameters registered as leaves on a tape.
struct BoundNet {
  const FeatureNet* net = nullptr;
  std::vector<ad::Var> params;
};

BoundNet bind(ad::Tape& tape, const FeatureNet& net, bool requires_grad);

/// Full forward pass to pooled features [N, K]. Input is NCHW on the 0..255
/// pixel scale; a fixed 1/255 scale is applied before the first convolution.
ad::Var features(ad::Tape& tape, const BoundNet& bound, ad::Var images);

/// Parameter-free alignment path across a stage: 2x2 average pooling when the
/// stage halved the resolution, channel tiling when it widened, then an
/// additive join with the stage output.
ad::Var side_connect(ad::Tape& tape, ad::Var stage_input, ad::Var stage_output);

}  // namespace jescore::nn
