// jescore: train and analyze a joint energy-score model of noisy images and
// class labels. One forward pass classifies; the input-gradient denoises.
//
// Subcommands: make-data, train, eval, denoise, attack, jacobian, biasvar.
// Each run is driven by a single JSON config; flags only select the config
// path, output directory, seed override, and deterministic mode.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "jescore/adversarial.hpp"
#include "jescore/analysis.hpp"
#include "jescore/biasvar.hpp"
#include "jescore/checkpoint.hpp"
#include "jescore/data.hpp"
#include "jescore/errors.hpp"
#include "jescore/gmm.hpp"
#include "jescore/kernels.hpp"
#include "jescore/trainer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using jescore::ConfigError;
using jescore::DataError;
using jescore::NumericalError;
using jescore::Tensor;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;
namespace jc = jescore;

struct GlobalOpts {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;  // -1 means "use the config seed"
  bool deterministic = false;
};

ordered_json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  try {
    ordered_json j;
    f >> j;
    return j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

/// Unknown keys are rejected so typos fail loudly before any work happens.
void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object()) throw ConfigError("config section " + context + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key))
      throw ConfigError("unknown key \"" + key + "\" in " + context);
  }
}

fs::path resolve_out_dir(const GlobalOpts& g, const ordered_json& cfg) {
  std::string dir = g.out_dir;
  if (dir.empty()) dir = cfg.value("out_dir", std::string("jescore-out"));
  fs::create_directories(dir);
  return dir;
}

uint64_t resolve_seed(const GlobalOpts& g, const ordered_json& cfg, uint64_t fallback = 0) {
  if (g.seed >= 0) return static_cast<uint64_t>(g.seed);
  return cfg.value("seed", fallback);
}

void apply_determinism(const GlobalOpts& g) {
#ifdef _OPENMP
  if (g.deterministic) omp_set_num_threads(1);
#endif
}

jc::gmm::GmmSpec parse_world(const ordered_json& w) {
  check_keys(w, {"classes", "channels", "height", "width", "priors", "taus", "means",
                 "means_pattern"},
             "world");
  const int classes = w.value("classes", 2);
  const int64_t c = w.value("channels", 1);
  const int64_t h = w.value("height", 8);
  const int64_t wd = w.value("width", 8);
  if (classes < 1 || c < 1 || h < 1 || wd < 1)
    throw ConfigError("world: classes and image dimensions must be positive");
  jescore::Shape shape{c, h, wd};

  jc::gmm::GmmSpec g;
  if (w.contains("means")) {
    g.image_shape = shape;
    for (const auto& mv : w.at("means")) {
      auto vals = mv.get<std::vector<double>>();
      g.means.push_back(Tensor::from_f64(shape, vals));
    }
  } else {
    ordered_json pat = w.value("means_pattern", ordered_json::object());
    check_keys(pat, {"kind", "amplitude", "offset"}, "world.means_pattern");
    const std::string kind = pat.value("kind", "cosine");
    if (kind != "cosine") throw ConfigError("world: unknown means pattern " + kind);
    g = jc::gmm::make_cosine_spec(classes, shape, pat.value("amplitude", 40.0),
                                  pat.value("offset", 128.0), 25.0);
  }
  if (w.contains("priors"))
    g.priors = w.at("priors").get<std::vector<double>>();
  else if (g.priors.empty())
    g.priors.assign(static_cast<size_t>(classes), 1.0 / classes);
  if (w.contains("taus")) {
    auto t = w.at("taus");
    if (t.is_number())
      g.taus.assign(static_cast<size_t>(classes), t.get<double>());
    else
      g.taus = t.get<std::vector<double>>();
  } else if (g.taus.empty()) {
    g.taus.assign(static_cast<size_t>(classes), 25.0);
  }
  g.validate();
  return g;
}

int cmd_make_data(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"world", "train_count", "test_count", "seed", "pixels_u8", "out_dir"},
             "make-data config");
  jc::gmm::GmmSpec world = parse_world(cfg.value("world", ordered_json::object()));
  const int64_t train_n = cfg.value("train_count", int64_t{5000});
  const int64_t test_n = cfg.value("test_count", int64_t{1000});
  if (train_n < 1 || test_n < 0) throw ConfigError("make-data: counts must be positive");
  const bool u8 = cfg.value("pixels_u8", false);
  const uint64_t seed = resolve_seed(g, cfg);
  fs::path out = resolve_out_dir(g, cfg);

  jc::Rng root(seed);
  jc::Rng train_rng = root.fork("train-data");
  jc::data::Dataset train = jc::gmm::gmm_sample(world, train_n, train_rng);
  jc::data::save_dataset(train, out, "train", u8);
  if (test_n > 0) {
    jc::Rng test_rng = root.fork("test-data");
    jc::data::Dataset test = jc::gmm::gmm_sample(world, test_n, test_rng);
    jc::data::save_dataset(test, out, "test", u8);
  }
  jc::gmm::save_spec(world, out / "gmm.json");
  std::printf("make-data: wrote %" PRId64 " train / %" PRId64 " test samples to %s\n", train_n,
              test_n, out.string().c_str());
  return 0;
}

int cmd_train(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"dataset", "arch", "train", "model_seed", "resume", "out_dir", "seed"},
             "train config");
  if (!cfg.contains("dataset")) throw ConfigError("train: dataset path required");
  jc::data::Dataset ds = jc::data::load_dataset(cfg.at("dataset").get<std::string>());
  fs::path out = resolve_out_dir(g, cfg);

  jc::nn::JointModel model;
  jc::train::OptimizerState opt;
  jc::train::TrainConfig tcfg;
  int64_t start_iteration = 0;
  if (cfg.contains("resume")) {
    jc::ckpt::Checkpoint c = jc::ckpt::load_checkpoint(cfg.at("resume").get<std::string>());
    model = c.model;
    opt = c.opt;
    tcfg = c.train_cfg;
    start_iteration = c.iteration;
    std::printf("train: resuming at iteration %" PRId64 "\n", start_iteration);
  } else {
    jc::nn::ArchConfig arch = jc::ckpt::arch_from_json(cfg.value("arch", ordered_json::object()));
    tcfg = jc::ckpt::train_from_json(cfg.value("train", ordered_json::object()));
    model = jc::nn::build_joint_model(arch, ds.num_classes,
                                      cfg.value("model_seed", uint64_t{1}));
  }
  if (g.seed >= 0) tcfg.seed = static_cast<uint64_t>(g.seed);
  if (g.deterministic) tcfg.deterministic = true;

  std::ofstream metrics(out / "metrics.csv",
                        start_iteration > 0 ? std::ios::app : std::ios::trunc);
  if (start_iteration == 0) metrics << "iteration,lr,ce_loss,dsm_loss,grad_norm,wall_time\n";

  jc::train::TrainHooks hooks;
  const bool zero_wall = tcfg.deterministic;  // keeps rerun outputs byte-identical
  hooks.on_metrics = [&](const jc::train::IterMetrics& m) {
    char line[256];
    std::snprintf(line, sizeof(line), "%" PRId64 ",%.8e,%.8e,%.8e,%.8e,%.3f\n", m.iteration,
                  m.lr, m.ce_loss, m.dsm_loss, m.grad_norm, zero_wall ? 0.0 : m.wall_time_s);
    metrics << line;
    metrics.flush();
  };
  hooks.on_checkpoint = [&](const jc::nn::JointModel& mm, const jc::train::OptimizerState& oo,
                            int64_t iter, bool diagnostic) {
    std::map<std::string, double> snap;
    const std::string name = diagnostic ? "checkpoint_diagnostic.jesm"
                                        : "checkpoint_" + std::to_string(iter) + ".jesm";
    jc::ckpt::save_checkpoint(jc::ckpt::make_checkpoint(mm, tcfg, oo, iter, snap), out / name);
  };

  try {
    jc::train::train(model, ds, tcfg, opt, start_iteration, hooks);
  } catch (const NumericalError&) {
    std::fprintf(stderr, "train: aborted on non-finite loss; diagnostic checkpoint written\n");
    throw;
  }
  jc::ckpt::save_checkpoint(
      jc::ckpt::make_checkpoint(model, tcfg, opt, tcfg.iterations, {}),
      out / "checkpoint_final.jesm");
  std::printf("train: finished %" PRId64 " iterations, checkpoint at %s\n", tcfg.iterations,
              (out / "checkpoint_final.jesm").string().c_str());
  return 0;
}

int cmd_eval(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"checkpoint", "dataset", "sigmas", "max_samples", "oracle_gmm", "seed",
                   "out_dir"},
             "eval config");
  jc::ckpt::Checkpoint c = jc::ckpt::load_checkpoint(cfg.at("checkpoint").get<std::string>());
  jc::data::Dataset ds = jc::data::load_dataset(cfg.at("dataset").get<std::string>());
  std::vector<double> sigmas = cfg.value("sigmas", std::vector<double>{15.0, 25.0, 50.0});
  int64_t max_samples = cfg.value("max_samples", int64_t{0});
  const uint64_t seed = resolve_seed(g, cfg);
  fs::path out = resolve_out_dir(g, cfg);

  const bool use_oracle = cfg.contains("oracle_gmm");
  jc::gmm::GmmSpec oracle;
  if (use_oracle) oracle = jc::gmm::load_spec(cfg.at("oracle_gmm").get<std::string>());

  int64_t n = ds.count();
  if (max_samples > 0) n = std::min(n, max_samples);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  jc::data::ImageBatch batch = ds.select(idx);

  const double acc = jc::train::accuracy(c.model, ds, n);

  std::ofstream f(out / "eval.csv", std::ios::trunc);
  f << "accuracy";
  for (double s : sigmas) f << ",psnr_sigma_" << s;
  f << ",n\n";
  f << 100.0 * acc;
  jc::Rng root(seed);
  for (double sigma : sigmas) {
    jc::Rng nrng = root.fork("eval-noise", static_cast<uint64_t>(sigma * 1000));
    auto [noisy, eps] = jc::data::add_noise(batch.images, sigma, nrng);
    Tensor denoised;
    if (use_oracle) {
      denoised = jc::gmm::posterior_mean_batch(oracle, noisy.astype(jescore::DType::f64), sigma)
                     .astype(jescore::DType::f32);
    } else {
      denoised = jc::nn::denoise_uncond(c.model, noisy, sigma);
    }
    f << "," << jc::analysis::psnr(batch.images.astype(denoised.dtype()), denoised);
  }
  f << "," << n << "\n";
  std::printf("eval: accuracy %.2f%% over %" PRId64 " samples, table at %s\n", 100.0 * acc, n,
              (out / "eval.csv").string().c_str());
  return 0;
}

int cmd_denoise(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"checkpoint", "dataset", "index", "sigma", "class", "difference_scale",
                   "out_dir", "seed"},
             "denoise config");
  jc::ckpt::Checkpoint c = jc::ckpt::load_checkpoint(cfg.at("checkpoint").get<std::string>());
  jc::data::Dataset ds = jc::data::load_dataset(cfg.at("dataset").get<std::string>());
  const int64_t index = cfg.value("index", int64_t{0});
  if (index < 0 || index >= ds.count()) throw ConfigError("denoise: index out of range");
  const double sigma = cfg.value("sigma", 50.0);
  const double diff_scale = cfg.value("difference_scale", 500.0);
  fs::path out = resolve_out_dir(g, cfg);

  jc::data::ImageBatch one = ds.select({index});
  Tensor uncond = jc::nn::denoise_uncond(c.model, one.images, sigma);

  auto write_blob = [&](const fs::path& p, const Tensor& t) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + p.string());
    f.write(static_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.nbytes()));
  };
  write_blob(out / "denoised.f32.bin", uncond);

  ordered_json meta;
  meta["sigma"] = sigma;
  meta["index"] = index;
  meta["shape"] = one.images.shape();
  meta["files"] = {{"unconditional", "denoised.f32.bin"}};
  if (cfg.contains("class")) {
    const int cls = cfg.at("class").get<int>();
    if (cls < 1 || cls > c.model.num_classes()) throw ConfigError("denoise: class out of range");
    Tensor cond = jc::nn::denoise_cond(c.model, one.images, {static_cast<uint16_t>(cls)}, sigma);
    Tensor diff = Tensor::zeros(cond.shape(), cond.dtype());
    for (int64_t i = 0; i < diff.numel(); ++i)
      diff.set(i, diff_scale * (cond.at(i) - uncond.at(i)));
    write_blob(out / "denoised_conditional.f32.bin", cond);
    write_blob(out / "difference.f32.bin", diff);
    meta["class"] = cls;
    meta["difference_scale"] = diff_scale;
    meta["files"]["conditional"] = "denoised_conditional.f32.bin";
    meta["files"]["difference"] = "difference.f32.bin";
  }
  std::ofstream mf(out / "denoise.json");
  mf << meta.dump(2) << "\n";
  std::printf("denoise: wrote blobs to %s\n", out.string().c_str());
  return 0;
}

int cmd_attack(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"checkpoint", "dataset", "norm", "epsilons", "steps", "step_size",
                   "random_start", "sigma_eval", "max_samples", "seed", "out_dir"},
             "attack config");
  jc::ckpt::Checkpoint c = jc::ckpt::load_checkpoint(cfg.at("checkpoint").get<std::string>());
  jc::data::Dataset ds = jc::data::load_dataset(cfg.at("dataset").get<std::string>());
  const std::string norm_s = cfg.value("norm", std::string("linf"));
  jc::adv::AttackConfig::Norm norm;
  if (norm_s == "linf")
    norm = jc::adv::AttackConfig::Norm::linf;
  else if (norm_s == "l2")
    norm = jc::adv::AttackConfig::Norm::l2;
  else
    throw ConfigError("attack: norm must be linf or l2");

  jc::adv::AttackConfig base;
  base.steps = cfg.value("steps", 40);
  base.step_size = cfg.value("step_size", 0.0);
  base.random_start = cfg.value("random_start", true);
  base.sigma_eval = cfg.value("sigma_eval", 0.0);
  base.seed = resolve_seed(g, cfg);
  std::vector<double> epsilons =
      cfg.value("epsilons", std::vector<double>{0.0, 1.0, 2.0, 4.0, 8.0});
  const int64_t max_samples = cfg.value("max_samples", int64_t{256});
  fs::path out = resolve_out_dir(g, cfg);

  auto rows = jc::adv::robust_accuracy_curve(c.model, ds, norm, epsilons, base, max_samples);
  std::ofstream f(out / "attack.csv", std::ios::trunc);
  f << "epsilon,accuracy,n,seed\n";
  for (const auto& r : rows)
    f << r.epsilon << "," << r.accuracy << "," << r.n << "," << r.seed << "\n";
  std::printf("attack: wrote %zu curve rows to %s\n", rows.size(),
              (out / "attack.csv").string().c_str());
  return 0;
}

int cmd_jacobian(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"checkpoint", "dataset", "index", "sigma", "k", "stem", "out_dir", "seed"},
             "jacobian config");
  jc::ckpt::Checkpoint c = jc::ckpt::load_checkpoint(cfg.at("checkpoint").get<std::string>());
  jc::data::Dataset ds = jc::data::load_dataset(cfg.at("dataset").get<std::string>());
  const int64_t index = cfg.value("index", int64_t{0});
  if (index < 0 || index >= ds.count()) throw ConfigError("jacobian: index out of range");
  const double sigma = cfg.value("sigma", 50.0);
  const int64_t k = cfg.value("k", int64_t{5});
  const std::string stem = cfg.value("stem", std::string("jacobian"));
  fs::path out = resolve_out_dir(g, cfg);

  jc::nn::JointModel m64 = c.model.astype(jescore::DType::f64);
  jc::data::ImageBatch one = ds.select({index});
  Tensor y = one.images.astype(jescore::DType::f64)
                 .reshaped({one.images.dim(1), one.images.dim(2), one.images.dim(3)});
  jc::analysis::JacobianReport report =
      jc::analysis::make_jacobian_report(m64, y, sigma, k, "index " + std::to_string(index));
  jc::analysis::save_report(report, out, stem);
  std::printf("jacobian: dim %" PRId64 ", asymmetry %.3e, report at %s\n", report.dim,
              report.asymmetry, (out / (stem + ".json")).string().c_str());
  return 0;
}

int cmd_biasvar(const GlobalOpts& g) {
  ordered_json cfg = load_config(g.config_path);
  check_keys(cfg, {"d", "rho", "prior_logit", "mu1", "mu2", "n_grid", "repetitions",
                   "moment_mc", "kl_mc", "seed", "out_dir"},
             "biasvar config");
  const int d = cfg.value("d", 2);
  jc::biasvar::FamilySpec spec = jc::biasvar::make_default_family(d, cfg.value("rho", 1.0));
  if (cfg.contains("prior_logit")) spec.prior_logit = cfg.at("prior_logit").get<double>();
  if (cfg.contains("mu1")) spec.mu1 = cfg.at("mu1").get<std::vector<double>>();
  if (cfg.contains("mu2")) spec.mu2 = cfg.at("mu2").get<std::vector<double>>();
  spec.validate();

  std::vector<int64_t> n_grid =
      cfg.value("n_grid", std::vector<int64_t>{64, 128, 256, 512, 1024});
  const int64_t reps = cfg.value("repetitions", int64_t{500});
  jc::biasvar::ConstantsOptions opts;
  opts.moment_mc = cfg.value("moment_mc", int64_t{100000});
  opts.kl_mc = cfg.value("kl_mc", int64_t{10000});
  opts.seed = resolve_seed(g, cfg);
  fs::path out = resolve_out_dir(g, cfg);

  jc::biasvar::RegimeCurve curve =
      jc::biasvar::regime_sweep(spec, n_grid, reps, opts.seed, opts);

  std::ofstream f(out / "regime.csv", std::ios::trunc);
  f << "n,estimator,mean_kl,stderr,bound,excluded\n";
  for (const auto& r : curve.rows)
    f << r.n << ","
      << (r.estimator == jc::biasvar::Estimator::generative ? "generative" : "discriminative")
      << "," << r.mean_kl << "," << r.stderr_mean << "," << r.bound << "," << r.excluded
      << "\n";

  ordered_json cj;
  cj["d"] = d;
  cj["rho"] = spec.rho;
  cj["m"] = spec.m();
  cj["m_eff"] = spec.m_eff();
  cj["generative"] = {{"b", curve.const_gen.b},
                      {"v", curve.const_gen.v},
                      {"b_hat", curve.b_hat_gen},
                      {"v_hat", curve.v_hat_gen},
                      {"fit_residual", curve.fit_residual_gen},
                      {"ill_conditioned", curve.const_gen.ill_conditioned}};
  cj["discriminative"] = {{"b", curve.const_dis.b},
                          {"v", curve.const_dis.v},
                          {"b_hat", curve.b_hat_dis},
                          {"v_hat", curve.v_hat_dis},
                          {"fit_residual", curve.fit_residual_dis},
                          {"ill_conditioned", curve.const_dis.ill_conditioned}};
  std::ofstream cf(out / "constants.json");
  cf << cj.dump(2) << "\n";
  std::printf("biasvar: v_dis %.3f (m_eff %d), v_gen %.3f, outputs at %s\n",
              curve.const_dis.v, spec.m_eff(), curve.const_gen.v, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint energy-score model toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", g.config_path, "JSON run configuration")->required();
    sub->add_option("--out", g.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", g.seed, "seed override");
    sub->add_flag("--deterministic", g.deterministic,
                  "single-threaded reductions and time-free outputs");
  };

  auto* make_data = app.add_subcommand("make-data", "sample a Gaussian-mixture dataset");
  auto* train = app.add_subcommand("train", "joint classification + denoising training");
  auto* eval = app.add_subcommand("eval", "accuracy and per-sigma denoising PSNR table");
  auto* denoise = app.add_subcommand("denoise", "denoise one image, optionals conditioned");
  auto* attack = app.add_subcommand("attack", "PGD robust-accuracy curve");
  auto* jacobian = app.add_subcommand("jacobian", "dense denoiser-Jacobian eigenreport");
  auto* biasvar = app.add_subcommand("biasvar", "generative vs discriminative error lab");
  for (auto* sub : {make_data, train, eval, denoise, attack, jacobian, biasvar})
    add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    apply_determinism(g);
    if (make_data->parsed()) return cmd_make_data(g);
    if (train->parsed()) return cmd_train(g);
    if (eval->parsed()) return cmd_eval(g);
    if (denoise->parsed()) return cmd_denoise(g);
    if (attack->parsed()) return cmd_attack(g);
    if (jacobian->parsed()) return cmd_jacobian(g);
    if (biasvar->parsed()) return cmd_biasvar(g);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const jescore::UsageError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
