#include "jescore/gradresnet.hpp"

#include <cmath>

#include "jescore/errors.hpp"
#include "jescore/rng.hpp"

namespace jescore::nn {

namespace {

constexpr double kInputScale = 1.0 / 255.0;

struct ConvSpec {
  std::string name;
  int64_t cout, cin, k, stride, pad;
};

/// Walks the architecture in forward order, invoking callbacks for each
/// parameter. Keeps construction and binding in lockstep.
template <class ConvFn, class GainFn, class BiasFn>
void walk_params(const ArchConfig& c, ConvFn on_conv, GainFn on_gain, BiasFn on_bias) {
  auto conv = [&](const std::string& name, int64_t cout, int64_t cin, int64_t k, int64_t stride,
                  int64_t pad) {
    on_conv(ConvSpec{name, cout, cin, k, stride, pad});
    if (c.biases) on_bias(name + ".bias", cout);
  };
  const int64_t k0 = c.first_conv == ArchConfig::FirstConv::k3s1 ? 3 : 7;
  const int64_t s0 = c.first_conv == ArchConfig::FirstConv::k3s1 ? 1 : 2;
  conv("stem.conv", c.stage_channels[0], c.input_channels, k0, s0, k0 / 2);
  int64_t cin = c.stage_channels[0];
  for (size_t si = 0; si < c.stage_channels.size(); ++si) {
    const int64_t cout = c.stage_channels[si];
    for (int bi = 0; bi < c.blocks_per_stage[si]; ++bi) {
      const bool down = si > 0 && bi == 0;
      const int64_t stride = down ? 2 : 1;
      const std::string base = "stage" + std::to_string(si) + ".block" + std::to_string(bi);
      conv(base + ".conv1", cout, cin, 3, stride, 1);
      conv(base + ".conv2", cout, cout, 3, 1, 1);
      if (down) conv(base + ".shortcut", cout, cin, 1, 2, 0);
      if (c.norm != ArchConfig::Norm::none) {
        on_gain(base + ".norm.gain", cout);
        if (c.biases) on_bias(base + ".norm.bias", cout);
      }
      cin = cout;
    }
  }
}

}  // namespace

void ArchConfig::validate() const {
  if (input_channels < 1) throw ConfigError("arch: input_channels must be >= 1");
  if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size())
    throw ConfigError("arch: stage_channels and blocks_per_stage must be equal-length");
  for (int ch : stage_channels)
    if (ch < 1) throw ConfigError("arch: stage channel counts must be positive");
  for (int b : blocks_per_stage)
    if (b < 1) throw ConfigError("arch: blocks_per_stage entries must be positive");
  if (feature_dim != stage_channels.back())
    throw ConfigError("arch: feature_dim must equal the last stage channel count");
  if (norm == Norm::groupnorm_biasfree) {
    if (groups < 1) throw ConfigError("arch: groups must be >= 1");
    for (int ch : stage_channels)
      if (ch % groups != 0) throw ConfigError("arch: groups must divide every stage width");
  }
  if (side_connections) {
    for (size_t i = 1; i < stage_channels.size(); ++i)
      if (stage_channels[i] % stage_channels[i - 1] != 0)
        throw ConfigError("arch: side connections need integer stage width ratios");
  }
}

int64_t FeatureNet::param_count() const {
  int64_t n = 0;
  for (const Tensor& p : params) n += p.numel();
  return n;
}

int FeatureNet::param_index(const std::string& name) const {
  for (size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return static_cast<int>(i);
  throw UsageError("unknown parameter: " + name);
}

FeatureNet FeatureNet::astype(DType dt) const {
  FeatureNet out;
  out.config = config;
  out.param_names = param_names;
  out.params.reserve(params.size());
  for (const Tensor& p : params) out.params.push_back(p.astype(dt));
  return out;
}

FeatureNet build_feature_net(const ArchConfig& config, uint64_t seed, DType dt) {
  config.validate();
  FeatureNet net;
  net.config = config;
  Rng root(seed);
  auto add_param = [&](const std::string& name, Tensor t) {
    net.param_names.push_back(name);
    net.params.push_back(std::move(t));
  };
  walk_params(
      config,
      [&](const ConvSpec& cs) {
        Tensor w = Tensor::zeros({cs.cout, cs.cin, cs.k, cs.k}, dt);
        Rng rng = root.fork(cs.name + ".weight");
        const double bound = 1.0 / std::sqrt(static_cast<double>(cs.cin * cs.k * cs.k));
        for (int64_t i = 0; i < w.numel(); ++i) w.set(i, rng.uniform(-bound, bound));
        add_param(cs.name + ".weight", std::move(w));
      },
      [&](const std::string& name, int64_t ch) { add_param(name, Tensor::full({ch}, 1.0, dt)); },
      [&](const std::string& name, int64_t ch) { add_param(name, Tensor::zeros({ch}, dt)); });
  return net;
}

BoundNet bind(ad::Tape& tape, const FeatureNet& net, bool requires_grad) {
  BoundNet b;
  b.net = &net;
  b.params.reserve(net.params.size());
  for (const Tensor& p : net.params) b.params.push_back(tape.leaf(p, requires_grad));
  return b;
}

ad::Var side_connect(ad::Tape& t, ad::Var stage_input, ad::Var stage_output) {
  const Shape& in = t.shape(stage_input);
  const Shape& out = t.shape(stage_output);
  if (in.size() != 4 || out.size() != 4) throw UsageError("side_connect: NCHW tensors required");
  ad::Var aligned = stage_input;
  if (in[2] != out[2] || in[3] != out[3]) {
    if ((in[2] + 1) / 2 != out[2] || (in[3] + 1) / 2 != out[3])
      throw UsageError("side_connect: spatial sizes must match or differ by a factor of 2");
    aligned = ad::avg_pool2(t, aligned);
  }
  if (in[1] != out[1]) {
    if (out[1] % in[1] != 0) throw UsageError("side_connect: channel widening must be integer");
    aligned = ad::channel_tile(t, aligned, out[1] / in[1]);
  }
  return ad::add(t, stage_output, aligned);
}

ad::Var features(ad::Tape& t, const BoundNet& bound, ad::Var images) {
  const FeatureNet& net = *bound.net;
  const ArchConfig& c = net.config;
  const Shape& s = t.shape(images);
  if (s.size() != 4) throw UsageError("features: NCHW input required");
  if (s[1] != c.input_channels) throw UsageError("features: channel count mismatch");

  auto pvar = [&](const std::string& name) { return bound.params[net.param_index(name)]; };
  auto maybe_bias = [&](ad::Var x, const std::string& name) {
    if (!c.biases) return x;
    return ad::add(t, x, ad::channel_broadcast(t, pvar(name + ".bias"), t.shape(x)));
  };
  auto act = [&](ad::Var x) {
    return c.activation == ArchConfig::Activation::gelu ? ad::gelu(t, x) : ad::relu(t, x);
  };
  auto norm = [&](ad::Var x, const std::string& base) {
    switch (c.norm) {
      case ArchConfig::Norm::none:
        return x;
      case ArchConfig::Norm::groupnorm_biasfree: {
        ad::Var y = ad::groupnorm_biasfree(t, x, pvar(base + ".norm.gain"), c.groups, c.norm_eps);
        return maybe_bias(y, base + ".norm");
      }
      case ArchConfig::Norm::batchnorm_eval: {
        // Fixed unit statistics (mean 0, variance 1): a pure channel rescale,
        // identical in train and eval and deterministic in both passes.
        ad::Var y = ad::scale(t, x, 1.0 / std::sqrt(1.0 + c.norm_eps));
        y = ad::channel_scale(t, y, pvar(base + ".norm.gain"));
        return maybe_bias(y, base + ".norm");
      }
    }
    return x;
  };

  ad::Var x = ad::scale(t, images, kInputScale);
  const int64_t k0 = c.first_conv == ArchConfig::FirstConv::k3s1 ? 3 : 7;
  const int64_t s0 = c.first_conv == ArchConfig::FirstConv::k3s1 ? 1 : 2;
  x = ad::conv2d(t, x, pvar("stem.conv.weight"), s0, k0 / 2);
  x = maybe_bias(x, "stem.conv");
  if (c.maxpool) x = ad::max_pool(t, x, 3, 2, 1);

  for (size_t si = 0; si < c.stage_channels.size(); ++si) {
    ad::Var stage_in = x;
    for (int bi = 0; bi < c.blocks_per_stage[si]; ++bi) {
      const bool down = si > 0 && bi == 0;
      const std::string base = "stage" + std::to_string(si) + ".block" + std::to_string(bi);
      ad::Var h = ad::conv2d(t, x, pvar(base + ".conv1.weight"), down ? 2 : 1, 1);
      h = maybe_bias(h, base + ".conv1");
      h = act(h);
      h = ad::conv2d(t, h, pvar(base + ".conv2.weight"), 1, 1);
      h = maybe_bias(h, base + ".conv2");
      h = norm(h, base);
      ad::Var shortcut = x;
      if (down) {
        shortcut = ad::conv2d(t, x, pvar(base + ".shortcut.weight"), 2, 0);
        shortcut = maybe_bias(shortcut, base + ".shortcut");
      }
      x = ad::add(t, h, shortcut);
    }
    if (c.side_connections) x = side_connect(t, stage_in, x);
  }
  return ad::global_avg_pool(t, x);
}

}  // namespace jescore::nn
