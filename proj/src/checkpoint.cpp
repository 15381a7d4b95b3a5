#include "jescore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "jescore/errors.hpp"

namespace jescore::ckpt {

using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace {
constexpr char kMagic[4] = {'J', 'E', 'S', 'M'};
constexpr uint32_t kVersion = 1;

std::string activation_name(nn::ArchConfig::Activation a) {
  return a == nn::ArchConfig::Activation::gelu ? "gelu" : "relu";
}
nn::ArchConfig::Activation activation_from(const std::string& s) {
  if (s == "gelu") return nn::ArchConfig::Activation::gelu;
  if (s == "relu") return nn::ArchConfig::Activation::relu;
  throw ConfigError("arch: unknown activation " + s);
}
std::string norm_name(nn::ArchConfig::Norm n) {
  switch (n) {
    case nn::ArchConfig::Norm::groupnorm_biasfree: return "groupnorm_biasfree";
    case nn::ArchConfig::Norm::batchnorm_eval: return "batchnorm_eval";
    case nn::ArchConfig::Norm::none: return "none";
  }
  return "?";
}
nn::ArchConfig::Norm norm_from(const std::string& s) {
  if (s == "groupnorm_biasfree") return nn::ArchConfig::Norm::groupnorm_biasfree;
  if (s == "batchnorm_eval") return nn::ArchConfig::Norm::batchnorm_eval;
  if (s == "none") return nn::ArchConfig::Norm::none;
  throw ConfigError("arch: unknown norm " + s);
}
std::string first_conv_name(nn::ArchConfig::FirstConv f) {
  return f == nn::ArchConfig::FirstConv::k3s1 ? "k3s1" : "k7s2";
}
nn::ArchConfig::FirstConv first_conv_from(const std::string& s) {
  if (s == "k3s1") return nn::ArchConfig::FirstConv::k3s1;
  if (s == "k7s2") return nn::ArchConfig::FirstConv::k7s2;
  throw ConfigError("arch: unknown first_conv " + s);
}
}  // namespace

void arch_to_json(const nn::ArchConfig& a, ordered_json& j) {
  j["input_channels"] = a.input_channels;
  j["stage_channels"] = a.stage_channels;
  j["blocks_per_stage"] = a.blocks_per_stage;
  j["feature_dim"] = a.feature_dim;
  j["activation"] = activation_name(a.activation);
  j["norm"] = norm_name(a.norm);
  j["groups"] = a.groups;
  j["biases"] = a.biases;
  j["side_connections"] = a.side_connections;
  j["first_conv"] = first_conv_name(a.first_conv);
  j["maxpool"] = a.maxpool;
  j["norm_eps"] = a.norm_eps;
}

nn::ArchConfig arch_from_json(const ordered_json& j) {
  nn::ArchConfig a;
  a.input_channels = j.value("input_channels", a.input_channels);
  a.stage_channels = j.value("stage_channels", a.stage_channels);
  a.blocks_per_stage = j.value("blocks_per_stage", a.blocks_per_stage);
  a.feature_dim = j.value("feature_dim", a.feature_dim);
  if (j.contains("activation")) a.activation = activation_from(j.at("activation"));
  if (j.contains("norm")) a.norm = norm_from(j.at("norm"));
  a.groups = j.value("groups", a.groups);
  a.biases = j.value("biases", a.biases);
  a.side_connections = j.value("side_connections", a.side_connections);
  if (j.contains("first_conv")) a.first_conv = first_conv_from(j.at("first_conv"));
  a.maxpool = j.value("maxpool", a.maxpool);
  a.norm_eps = j.value("norm_eps", a.norm_eps);
  a.validate();
  return a;
}

void train_to_json(const train::TrainConfig& t, ordered_json& j) {
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["iterations"] = t.iterations;
  j["batch_classification"] = t.batch_classification;
  j["batch_denoising"] = t.batch_denoising;
  j["sigma_classification"] = {t.schedule_classification.sigma_min,
                               t.schedule_classification.sigma_max};
  j["sigma_denoising"] = {t.schedule_denoising.sigma_min, t.schedule_denoising.sigma_max};
  j["dsm_variant"] =
      t.dsm_variant == train::TrainConfig::DsmVariant::unconditional ? "unconditional"
                                                                     : "conditional";
  j["objective"] =
      t.objective == train::TrainConfig::Objective::joint ? "joint" : "classification_only";
  j["seed"] = t.seed;
  j["crop_pad"] = t.crop_pad;
  j["metrics_every"] = t.metrics_every;
  j["checkpoint_every"] = t.checkpoint_every;
  j["deterministic"] = t.deterministic;
}

train::TrainConfig train_from_json(const ordered_json& j) {
  train::TrainConfig t;
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.iterations = j.value("iterations", t.iterations);
  t.batch_classification = j.value("batch_classification", t.batch_classification);
  t.batch_denoising = j.value("batch_denoising", t.batch_denoising);
  if (j.contains("sigma_classification")) {
    auto v = j.at("sigma_classification").get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError("train: sigma_classification must be [min,max]");
    t.schedule_classification = {v[0], v[1]};
  }
  if (j.contains("sigma_denoising")) {
    auto v = j.at("sigma_denoising").get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError("train: sigma_denoising must be [min,max]");
    t.schedule_denoising = {v[0], v[1]};
  }
  if (j.contains("dsm_variant")) {
    std::string s = j.at("dsm_variant");
    if (s == "unconditional")
      t.dsm_variant = train::TrainConfig::DsmVariant::unconditional;
    else if (s == "conditional")
      t.dsm_variant = train::TrainConfig::DsmVariant::conditional;
    else
      throw ConfigError("train: unknown dsm_variant " + s);
  }
  if (j.contains("objective")) {
    std::string s2 = j.at("objective");
    if (s2 == "joint")
      t.objective = train::TrainConfig::Objective::joint;
    else if (s2 == "classification_only")
      t.objective = train::TrainConfig::Objective::classification_only;
    else
      throw ConfigError("train: unknown objective " + s2);
  }
  t.seed = j.value("seed", t.seed);
  t.crop_pad = j.value("crop_pad", t.crop_pad);
  t.metrics_every = j.value("metrics_every", t.metrics_every);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  t.deterministic = j.value("deterministic", t.deterministic);
  return t;
}

namespace {

struct TensorEntry {
  std::string name;
  const Tensor* tensor;
};

std::vector<TensorEntry> enumerate_tensors(const Checkpoint& c) {
  std::vector<TensorEntry> out;
  for (size_t i = 0; i < c.model.net.params.size(); ++i)
    out.push_back({"net." + c.model.net.param_names[i], &c.model.net.params[i]});
  out.push_back({"head.W", &c.model.head.W});
  out.push_back({"head.w", &c.model.head.w});
  if (c.has_optimizer) {
    const size_t np = c.model.net.params.size();
    for (size_t i = 0; i < np; ++i) {
      out.push_back({"opt.m.net." + c.model.net.param_names[i], &c.opt.first_moment[i]});
      out.push_back({"opt.v.net." + c.model.net.param_names[i], &c.opt.second_moment[i]});
    }
    out.push_back({"opt.m.head.W", &c.opt.first_moment[np]});
    out.push_back({"opt.v.head.W", &c.opt.second_moment[np]});
    out.push_back({"opt.m.head.w", &c.opt.first_moment[np + 1]});
    out.push_back({"opt.v.head.w", &c.opt.second_moment[np + 1]});
  }
  return out;
}

}  // namespace

Checkpoint make_checkpoint(const nn::JointModel& model, const train::TrainConfig& cfg,
                           const train::OptimizerState& opt, int64_t iteration,
                           std::map<std::string, double> metrics) {
  Checkpoint c;
  c.arch = model.net.config;
  c.train_cfg = cfg;
  c.num_classes = model.num_classes();
  c.iteration = iteration;
  c.metrics = std::move(metrics);
  c.model = model;
  c.opt = opt;
  c.has_optimizer = !opt.first_moment.empty();
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (c.has_optimizer &&
      c.opt.first_moment.size() != c.model.net.params.size() + 2)
    throw UsageError("checkpoint: optimizer state does not match the parameter list");

  auto tensors = enumerate_tensors(c);
  ordered_json header;
  header["format_version"] = kVersion;
  ordered_json arch_j;
  arch_to_json(c.arch, arch_j);
  header["arch"] = arch_j;
  ordered_json train_j;
  train_to_json(c.train_cfg, train_j);
  header["train"] = train_j;
  header["num_classes"] = c.num_classes;
  header["iteration"] = c.iteration;
  header["metrics"] = c.metrics;
  header["has_optimizer"] = c.has_optimizer;
  header["opt_step"] = c.opt.step;

  ordered_json index = ordered_json::array();
  uint64_t offset = 0;
  for (const auto& e : tensors) {
    ordered_json ent;
    ent["name"] = e.name;
    ent["dtype"] = dtype_name(e.tensor->dtype());
    ent["shape"] = e.tensor->shape();
    ent["offset"] = offset;
    ent["nbytes"] = e.tensor->nbytes();
    index.push_back(std::move(ent));
    offset += e.tensor->nbytes();
  }
  header["tensors"] = std::move(index);

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(kMagic, 4);
  uint32_t ver = kVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : tensors)
    f.write(static_cast<const char*>(e.tensor->raw()),
            static_cast<std::streamsize>(e.tensor->nbytes()));
  if (!f) throw DataError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());
  uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != kVersion) throw DataError("checkpoint: unsupported version");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("checkpoint: truncated header");
  ordered_json header;
  try {
    header = ordered_json::parse(hs);
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint: header parse error: ") + e.what());
  }

  Checkpoint c;
  c.arch = arch_from_json(header.at("arch"));
  c.train_cfg = train_from_json(header.at("train"));
  c.num_classes = header.at("num_classes").get<int>();
  c.iteration = header.at("iteration").get<int64_t>();
  c.metrics = header.value("metrics", std::map<std::string, double>{});
  c.has_optimizer = header.value("has_optimizer", false);
  c.opt.step = header.value("opt_step", int64_t{0});

  std::map<std::string, Tensor> loaded;
  uint64_t expected_offset = 0;
  for (const auto& ent : header.at("tensors")) {
    const std::string name = ent.at("name");
    const DType dt = dtype_from_name(ent.at("dtype"));
    const Shape shape = ent.at("shape").get<Shape>();
    const uint64_t offset = ent.at("offset").get<uint64_t>();
    const uint64_t nbytes = ent.at("nbytes").get<uint64_t>();
    if (offset != expected_offset) throw DataError("checkpoint: non-contiguous tensor index");
    Tensor t = Tensor::zeros(shape, dt);
    if (t.nbytes() != nbytes) throw DataError("checkpoint: tensor byte size mismatch");
    f.read(static_cast<char*>(t.raw()), static_cast<std::streamsize>(nbytes));
    if (!f) throw DataError("checkpoint: truncated payload at " + name);
    if (loaded.count(name)) throw DataError("checkpoint: duplicate tensor " + name);
    loaded.emplace(name, std::move(t));
    expected_offset += nbytes;
  }

  // Rebuild the model skeleton from the architecture, then overwrite every
  // parameter from the payload; missing or extra names are rejected.
  c.model = nn::build_joint_model(c.arch, c.num_classes, 0,
                                  loaded.at("head.W").dtype());
  size_t used = 0;
  auto take = [&](const std::string& name) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw DataError("checkpoint: missing tensor " + name);
    ++used;
    return it->second;
  };
  for (size_t i = 0; i < c.model.net.params.size(); ++i) {
    Tensor t = take("net." + c.model.net.param_names[i]);
    if (t.shape() != c.model.net.params[i].shape())
      throw DataError("checkpoint: shape mismatch for " + c.model.net.param_names[i]);
    c.model.net.params[i] = t;
  }
  c.model.head.W = take("head.W");
  c.model.head.w = take("head.w");
  if (c.has_optimizer) {
    const size_t np = c.model.net.params.size();
    c.opt.first_moment.resize(np + 2);
    c.opt.second_moment.resize(np + 2);
    for (size_t i = 0; i < np; ++i) {
      c.opt.first_moment[i] = take("opt.m.net." + c.model.net.param_names[i]);
      c.opt.second_moment[i] = take("opt.v.net." + c.model.net.param_names[i]);
    }
    c.opt.first_moment[np] = take("opt.m.head.W");
    c.opt.second_moment[np] = take("opt.v.head.W");
    c.opt.first_moment[np + 1] = take("opt.m.head.w");
    c.opt.second_moment[np + 1] = take("opt.v.head.w");
  }
  if (used != loaded.size()) throw DataError("checkpoint: unreferenced tensors in payload");
  c.model.validate();
  return c;
}

}  // namespace jescore::ckpt
