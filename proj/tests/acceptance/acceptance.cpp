// Acceptance suite: each criterion prints one [PASS]/[FAIL] line with its
// measured numbers. Run with no arguments for the full list, or pass
// criterion numbers to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jescore/adversarial.hpp"
#include "jescore/analysis.hpp"
#include "jescore/biasvar.hpp"
#include "jescore/checkpoint.hpp"
#include "jescore/data.hpp"
#include "jescore/gmm.hpp"
#include "jescore/trainer.hpp"
#include "support/oracles.hpp"

using namespace jescore;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
};

void require(Outcome& o, bool cond, const std::string& what) {
  if (!cond) {
    o.pass = false;
    o.detail << "  FAILED: " << what << "\n";
  }
}

nn::ArchConfig micro_arch(std::vector<int> stages = {8, 16}, int groups = 4) {
  nn::ArchConfig c;
  c.input_channels = 1;
  c.stage_channels = stages;
  c.blocks_per_stage = std::vector<int>(stages.size(), 1);
  c.feature_dim = stages.back();
  c.groups = groups;
  return c;
}

gmm::GmmSpec desk_world() { return gmm::make_cosine_spec(2, {1, 8, 8}, 40.0, 128.0, 25.0); }

nn::JointModel train_small(const gmm::GmmSpec& world, const nn::ArchConfig& arch, int64_t iters,
                           uint64_t seed, int64_t samples = 3000,
                           train::TrainConfig::Objective objective =
                               train::TrainConfig::Objective::joint,
                           int batch_cls = 64, int batch_den = 32, double lr = 3e-4,
                           double weight_decay = 0.05) {
  Rng rng(seed);
  data::Dataset ds = gmm::gmm_sample(world, samples, rng);
  nn::JointModel m = nn::build_joint_model(arch, world.classes(), seed);
  train::TrainConfig cfg;
  cfg.iterations = iters;
  cfg.batch_classification = batch_cls;
  cfg.batch_denoising = batch_den;
  cfg.crop_pad = 2;
  cfg.metrics_every = 1000000;
  cfg.seed = seed * 131 + 7;
  cfg.objective = objective;
  cfg.lr = lr;
  cfg.weight_decay = weight_decay;
  train::OptimizerState opt;
  train::train(m, ds, cfg, opt);
  return m;
}

// --------------------------------------------------------------------------
// 1. Autodiff correctness: primitives and the full model gradient against
//    central finite differences, 1e-4 relative, 20 seeds, double precision.
// --------------------------------------------------------------------------
Outcome criterion_autodiff() {
  Outcome o;
  double worst_prim = 0, worst_model = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 101 + 3);
    Tensor x = testing::random_tensor({1, 3, 5, 5}, rng, DType::f64);
    Tensor k = testing::random_tensor({4, 3, 3, 3}, rng, DType::f64);
    Tensor gain = testing::random_tensor({3}, rng, DType::f64, 0.5, 2.0);
    Tensor logits = testing::random_tensor({3, 4}, rng, DType::f64, -3, 3);
    Tensor w = testing::random_tensor({5, 4}, rng, DType::f64);
    Tensor mat = testing::random_tensor({3, 4}, rng, DType::f64);

    auto track = [&](double e) { worst_prim = std::max(worst_prim, e); };
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sum_all(t, ad::gelu(t, v)); }, x));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sumsq(t, ad::conv2d(t, v, t.leaf(k), 1, 1)); },
        x));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var kk) {
          return ad::sumsq(t, ad::conv2d(t, t.leaf(x), kk, 2, 1));
        },
        k));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) {
          return ad::sumsq(t, ad::gelu(t, ad::groupnorm_biasfree(t, v, t.leaf(gain), 3, 1e-5)));
        },
        x));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sumsq(t, ad::logsumexp_rows(t, v)); }, logits));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sumsq(t, ad::matmul_nt(t, v, t.leaf(w))); },
        mat));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sum_all(t, ad::avg_pool2(t, v)); }, x));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sumsq(t, ad::channel_tile(t, v, 2)); }, x));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sumsq(t, ad::global_avg_pool(t, v)); }, x));
    track(testing::gradcheck(
        [&](ad::Tape& t, ad::Var v) { return ad::sum_all(t, ad::relu(t, v)); }, x));

    // Full model: input score and a parameter gradient against FD.
    nn::JointModel m = nn::build_joint_model(micro_arch({4, 8}, 2), 2, seed, DType::f64);
    Tensor y = testing::random_tensor({1, 1, 6, 6}, rng, DType::f64, 0, 255);
    Tensor fd = testing::fd_gradient(
        [&](const Tensor& yy) { return nn::log_marginal(m, yy).at(0); }, y);
    worst_model = std::max(worst_model, testing::max_rel_err(nn::score_marginal(m, y), fd));
  }
  o.detail << "  worst primitive rel err " << worst_prim << ", worst model rel err "
           << worst_model;
  require(o, worst_prim < 1e-4, "primitive gradients exceed 1e-4 relative");
  require(o, worst_model < 1e-4, "full-model gradient exceeds 1e-4 relative");
  return o;
}

// --------------------------------------------------------------------------
// 2. Tweedie identity in the oracle world, 1e-8, 100 random (y, sigma).
// --------------------------------------------------------------------------
Outcome criterion_tweedie() {
  Outcome o;
  gmm::GmmSpec g = desk_world();
  Rng rng(42);
  double worst_identity = 0, worst_fd = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor y = testing::random_tensor({1, 8, 8}, rng, DType::f64, 0, 255);
    const double sigma = rng.uniform(1.0, 100.0);
    Tensor score = gmm::score_noisy(g, y, sigma);
    Tensor pm = gmm::posterior_mean(g, y, sigma);
    for (int64_t i = 0; i < 64; ++i)
      worst_identity = std::max(
          worst_identity,
          testing::rel_err(sigma * sigma * score.at(i) + y.at(i), pm.at(i), 1e-14));
    if (trial % 10 == 0) {
      // The log-density magnitude is a few hundred at d = 64, so a second-
      // order difference at the usual tiny step is roundoff-limited above
      // 1e-8. A fourth-order stencil at a larger step keeps both roundoff
      // and truncation far below the tolerance. Error is measured relative
      // to the score scale; per-coordinate ratios are meaningless where
      // components cross zero.
      const double h = 0.05;
      double scale = 0, diff = 0;
      for (int64_t i = 0; i < 64; ++i) {
        auto at_shift = [&](double delta) {
          Tensor ys = y.clone();
          ys.set(i, y.at(i) + delta);
          return gmm::log_density_noisy(g, ys, sigma);
        };
        const double fd = (at_shift(-2 * h) - 8 * at_shift(-h) + 8 * at_shift(h) -
                           at_shift(2 * h)) /
                          (12 * h);
        scale = std::max(scale, std::abs(score.at(i)));
        diff = std::max(diff, std::abs(score.at(i) - fd));
      }
      worst_fd = std::max(worst_fd, diff / std::max(scale, 1e-300));
    }
  }
  o.detail << "  worst tweedie residual " << worst_identity << ", worst fd gap " << worst_fd;
  require(o, worst_identity < 1e-8, "sigma^2 score + y vs posterior mean exceeds 1e-8");
  require(o, worst_fd < 1e-8, "closed-form score vs fd of log-density exceeds 1e-8");
  return o;
}

// --------------------------------------------------------------------------
// 3. DSM analytic optimum: oracle score gives tau^2/(tau^2+sigma^2) per
//    dimension within 2% over 1e5 Monte-Carlo draws (0.5 at tau = sigma).
// --------------------------------------------------------------------------
Outcome criterion_dsm_optimum() {
  Outcome o;
  const double tau = 50.0, sigma = 50.0;
  gmm::GmmSpec g;
  g.image_shape = {1, 4, 4};
  g.priors = {1.0};
  g.means = {Tensor::full({1, 4, 4}, 128.0, DType::f64)};
  g.taus = {tau};
  Rng rng(7);
  const int64_t draws = 100000 / 16;
  double acc = 0;
  int64_t count = 0;
  for (int64_t i = 0; i < draws; ++i) {
    Tensor x = Tensor::zeros({1, 4, 4}, DType::f64);
    Tensor eps = Tensor::zeros({1, 4, 4}, DType::f64);
    Tensor y = Tensor::zeros({1, 4, 4}, DType::f64);
    for (int64_t j = 0; j < 16; ++j) {
      x.set(j, 128.0 + tau * rng.normal());
      double e = rng.normal();
      eps.set(j, e);
      y.set(j, x.at(j) + sigma * e);
    }
    Tensor s = gmm::score_noisy(g, y, sigma);
    for (int64_t j = 0; j < 16; ++j) {
      double r = sigma * s.at(j) + eps.at(j);
      acc += r * r;
      ++count;
    }
  }
  const double per_dim = acc / static_cast<double>(count);
  const double want = tau * tau / (tau * tau + sigma * sigma);
  o.detail << "  per-dimension loss " << per_dim << " vs analytic " << want;
  require(o, std::abs(per_dim - want) < 0.02 * want, "per-dimension dsm off by more than 2%");
  return o;
}

// --------------------------------------------------------------------------
// 4. Joint-model algebra at 1e-5 relative on random inputs.
// --------------------------------------------------------------------------
Outcome criterion_joint_algebra() {
  Outcome o;
  nn::JointModel m = nn::build_joint_model(micro_arch(), 3, 11, DType::f64);
  Rng rng(13);
  double worst_norm = 0, worst_marg = 0, worst_adv = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor y = testing::random_tensor({2, 1, 8, 8}, rng, DType::f64, 0, 255);
    Tensor lc = nn::log_class_cond(m, y);
    for (int64_t i = 0; i < 2; ++i) {
      double s = 0;
      for (int64_t c = 0; c < 3; ++c) s += std::exp(lc.at(i * 3 + c));
      worst_norm = std::max(worst_norm, std::abs(s - 1.0));
    }
    Tensor lm = nn::log_marginal(m, y);
    for (int64_t i = 0; i < 2; ++i) {
      double mx = -1e300;
      std::vector<double> lj(3);
      for (uint16_t c = 1; c <= 3; ++c) {
        std::vector<uint16_t> labels(2, c);
        lj[c - 1] = nn::log_joint(m, y, labels).at(i);
        mx = std::max(mx, lj[c - 1]);
      }
      double s = 0;
      for (double v : lj) s += std::exp(v - mx);
      worst_marg = std::max(worst_marg, testing::rel_err(mx + std::log(s), lm.at(i), 1e-12));
    }
    std::vector<uint16_t> labels{static_cast<uint16_t>(1 + trial % 3),
                                 static_cast<uint16_t>(1 + (trial + 1) % 3)};
    Tensor direct = nn::adversarial_gradient(m, y, labels);
    const double sigma = rng.uniform(5.0, 80.0);
    Tensor via = nn::adversarial_gradient_via_denoisers(m, y, labels, sigma);
    worst_adv = std::max(worst_adv, testing::max_rel_err(direct, via, 1e-10));
  }
  o.detail << "  normalization " << worst_norm << ", marginalization " << worst_marg
           << ", adversarial identity " << worst_adv;
  require(o, worst_norm < 1e-6, "class posterior rows do not normalize at 1e-6");
  require(o, worst_marg < 1e-5, "marginalization identity exceeds 1e-5");
  require(o, worst_adv < 1e-5, "adversarial-gradient identity exceeds 1e-5");
  return o;
}

// --------------------------------------------------------------------------
// 5. Conservativity of a trained model's denoiser Jacobian at d = 64.
// --------------------------------------------------------------------------
Outcome criterion_conservativity() {
  Outcome o;
  gmm::GmmSpec world = desk_world();
  nn::JointModel m = train_small(world, micro_arch(), 400, 5).astype(DType::f64);
  Rng rng(17);
  Tensor y = testing::random_tensor({1, 8, 8}, rng, DType::f64, 0, 255);
  for (double sigma : {15.0, 50.0}) {
    double asym = -1;
    analysis::denoiser_jacobian(m, y, sigma, &asym);
    o.detail << "  sigma " << sigma << ": asymmetry " << asym;
    require(o, asym < 1e-3, "jacobian asymmetry exceeds 1e-3");
  }
  return o;
}

// --------------------------------------------------------------------------
// 6. Local linearity for the homogeneity-eligible configuration.
// --------------------------------------------------------------------------
Outcome criterion_local_linearity() {
  Outcome o;
  nn::ArchConfig arch = micro_arch();
  arch.activation = nn::ArchConfig::Activation::relu;
  arch.norm = nn::ArchConfig::Norm::none;
  arch.biases = false;
  gmm::GmmSpec world = desk_world();
  nn::JointModel m = train_small(world, arch, 300, 23).astype(DType::f64);
  Rng rng(29);
  double worst = 0;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor y = testing::random_tensor({1, 8, 8}, rng, DType::f64, 5, 250);
    worst = std::max(worst, analysis::local_linearity_residual(m, y, 30.0));
  }
  o.detail << "  worst residual " << worst;
  require(o, worst < 1e-3, "local-linearity residual exceeds 1e-3");
  return o;
}

// --------------------------------------------------------------------------
// 7. Desk-scale learning: accuracy vs Bayes and PSNR vs the oracle, 3 seeds.
// --------------------------------------------------------------------------
Outcome criterion_desk_learning() {
  Outcome o;
  gmm::GmmSpec world = desk_world();
  Rng brng(3);
  const double bayes = gmm::bayes_accuracy(world, 20000, brng);
  Rng trng(99);
  data::Dataset test_ds = gmm::gmm_sample(world, 512, trng);
  const double sigma = 50.0;
  o.detail << "  bayes accuracy " << bayes << "\n";

  // Per-dimension dsm normalization keeps the denoising gradient small next
  // to cross-entropy at this scale; a larger learning rate and no decay let
  // the 3k-iteration budget reach the oracle. Recorded in the run metadata.
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    nn::JointModel m = train_small(world, micro_arch({16, 32}, 8), 3000, seed, 5000,
                                   train::TrainConfig::Objective::joint, 128, 64, 6e-3, 0.0);
    const double acc = train::accuracy(m, test_ds);

    Rng erng(seed + 1000);
    auto [noisy, eps] = data::add_noise(test_ds.batch.images, sigma, erng);
    Tensor den = nn::denoise_uncond(m, noisy, sigma);
    const double psnr_model = analysis::psnr(test_ds.batch.images, den);
    Tensor oracle_den = gmm::posterior_mean_batch(world, noisy.astype(DType::f64), sigma);
    const double psnr_oracle =
        analysis::psnr(test_ds.batch.images.astype(DType::f64), oracle_den);

    o.detail << "  seed " << seed << ": accuracy " << acc << " (" << acc / bayes
             << " of bayes), psnr " << psnr_model << " vs oracle " << psnr_oracle << " (gap "
             << psnr_oracle - psnr_model << " dB)\n";
    require(o, acc >= 0.95 * bayes, "accuracy below 95% of bayes");
    require(o, psnr_oracle - psnr_model <= 1.0, "psnr more than 1 dB below the oracle");
  }
  return o;
}

// --------------------------------------------------------------------------
// 8. Bias-variance constants and regime curves.
// --------------------------------------------------------------------------
Outcome criterion_biasvar() {
  Outcome o;
  for (int d : {1, 2, 5}) {
    biasvar::FamilySpec spec = biasvar::make_default_family(d);
    biasvar::ConstantsOptions opts;
    opts.moment_mc = 100000;
    opts.kl_mc = 20000;
    opts.seed = static_cast<uint64_t>(d) * 7 + 1;
    biasvar::Constants cg = biasvar::asymptotic_constants(spec, biasvar::Estimator::generative,
                                                          opts);
    biasvar::Constants cd = biasvar::asymptotic_constants(
        spec, biasvar::Estimator::discriminative, opts);
    o.detail << "  d=" << d << ": b_gen " << cg.b << ", b_dis " << cd.b << ", v_gen " << cg.v
             << ", v_dis " << cd.v << " (d+1 = " << d + 1 << ")\n";
    require(o, std::abs(cg.b) < 5e-3, "well-specified generative bias not near zero");
    require(o, std::abs(cd.b) < 5e-3, "well-specified discriminative bias not near zero");
    require(o, std::abs(cd.v - (d + 1)) < 0.25 * (d + 1), "v_dis not within 25% of d+1");
    require(o, cg.v <= cd.v + 0.02 * (d + 1), "v_gen exceeds v_dis");
  }

  // Fitted slope of the d=2 regime curve at R=500.
  biasvar::FamilySpec spec2 = biasvar::make_default_family(2);
  biasvar::ConstantsOptions opts2;
  opts2.moment_mc = 60000;
  opts2.kl_mc = 10000;
  opts2.seed = 33;
  biasvar::RegimeCurve curve =
      biasvar::regime_sweep(spec2, {256, 512, 1024, 2048}, 500, 55, opts2);
  o.detail << "  d=2 fitted v_dis " << curve.v_hat_dis << " (want within 25% of 3), v_gen "
           << curve.v_hat_gen << "\n";
  require(o, std::abs(curve.v_hat_dis - 3.0) < 0.25 * 3.0, "fitted v_dis off by more than 25%");

  // Misspecified world: discriminative bias cannot exceed generative.
  biasvar::FamilySpec mis = biasvar::make_default_family(2, 2.0);
  biasvar::ConstantsOptions opts3;
  opts3.moment_mc = 50000;
  opts3.kl_mc = 30000;
  opts3.seed = 77;
  biasvar::Constants mg = biasvar::asymptotic_constants(mis, biasvar::Estimator::generative,
                                                        opts3);
  biasvar::Constants md = biasvar::asymptotic_constants(mis, biasvar::Estimator::discriminative,
                                                        opts3);
  o.detail << "  misspecified rho=2: b_gen " << mg.b << ", b_dis " << md.b << "\n";
  require(o, md.b <= mg.b + 1e-3, "misspecified b_dis exceeds b_gen");
  require(o, mg.b > 1e-3, "misspecified generative bias unexpectedly zero");

  // Stylized two-regime curves cross exactly where the constants say.
  const double crossing = biasvar::crossing_point(5, 20, 1, 100);
  o.detail << "  stylized crossing at n = " << crossing;
  require(o, std::abs(crossing - 20.0) < 1e-12, "stylized crossing not at n = 20");
  require(o, biasvar::bound_curve(1, 100, 10) > biasvar::bound_curve(5, 20, 10),
          "left of the crossing the discriminative bound should be larger");
  require(o, biasvar::bound_curve(1, 100, 40) < biasvar::bound_curve(5, 20, 40),
          "right of the crossing the generative bound should be larger");
  return o;
}

// --------------------------------------------------------------------------
// 9. Robustness direction: joint training dominates classification-only
//    at mid-range epsilon, averaged over 5 paired seeds.
// --------------------------------------------------------------------------
Outcome criterion_robustness() {
  Outcome o;
  gmm::GmmSpec world = desk_world();
  Rng trng(1234);
  data::Dataset test_raw = gmm::gmm_sample(world, 128, trng);
  data::Dataset test_ds{data::ImageBatch{test_raw.batch.images, test_raw.batch.labels}, 2};

  const std::vector<double> eps_grid{2.0, 4.0, 8.0};
  double joint_mean = 0, ce_mean = 0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    nn::JointModel joint = train_small(world, micro_arch(), 700, seed, 3000,
                                       train::TrainConfig::Objective::joint);
    nn::JointModel ce_only = train_small(world, micro_arch(), 700, seed, 3000,
                                         train::TrainConfig::Objective::classification_only);
    adv::AttackConfig base;
    base.steps = 20;
    base.seed = seed;
    auto rows_j = adv::robust_accuracy_curve(joint, test_ds, adv::AttackConfig::Norm::linf,
                                             eps_grid, base);
    auto rows_c = adv::robust_accuracy_curve(ce_only, test_ds, adv::AttackConfig::Norm::linf,
                                             eps_grid, base);
    double mj = 0, mc = 0;
    for (size_t i = 0; i < eps_grid.size(); ++i) {
      mj += rows_j[i].accuracy;
      mc += rows_c[i].accuracy;
      if (i > 0) {
        require(o, rows_j[i].accuracy <= rows_j[i - 1].accuracy + 0.01,
                "joint curve not non-increasing within 1% slack");
        require(o, rows_c[i].accuracy <= rows_c[i - 1].accuracy + 0.01,
                "baseline curve not non-increasing within 1% slack");
      }
    }
    mj /= eps_grid.size();
    mc /= eps_grid.size();
    joint_mean += mj;
    ce_mean += mc;
    o.detail << "  seed " << seed << ": joint robust acc " << mj << " vs ce-only " << mc
             << "\n";
  }
  joint_mean /= 5;
  ce_mean /= 5;
  o.detail << "  means over mid-range epsilon: joint " << joint_mean << " vs ce-only "
           << ce_mean;
  require(o, joint_mean >= ce_mean, "joint-trained robust accuracy below the ce-only baseline");
  return o;
}

// --------------------------------------------------------------------------
// 10. Format integrity: checkpoint and dataset round-trips, CIFAR reader.
// --------------------------------------------------------------------------
Outcome criterion_formats() {
  Outcome o;
  auto dir = fs::temp_directory_path() / "jescore_acceptance_formats";
  fs::create_directories(dir);

  nn::JointModel m = nn::build_joint_model(micro_arch(), 2, 3);
  train::TrainConfig cfg;
  cfg.iterations = 5;
  train::OptimizerState opt = train::init_optimizer(m.net.params);
  opt.first_moment.push_back(Tensor::zeros(m.head.W.shape(), m.head.W.dtype()));
  opt.second_moment.push_back(Tensor::zeros(m.head.W.shape(), m.head.W.dtype()));
  opt.first_moment.push_back(Tensor::zeros(m.head.w.shape(), m.head.w.dtype()));
  opt.second_moment.push_back(Tensor::zeros(m.head.w.shape(), m.head.w.dtype()));
  ckpt::save_checkpoint(ckpt::make_checkpoint(m, cfg, opt, 5), dir / "a.jesm");
  ckpt::Checkpoint loaded = ckpt::load_checkpoint(dir / "a.jesm");
  ckpt::save_checkpoint(loaded, dir / "b.jesm");
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  require(o, bytes(dir / "a.jesm") == bytes(dir / "b.jesm"),
          "checkpoint save-load-save not byte-identical");
  bool params_equal = true;
  for (size_t i = 0; i < m.net.params.size(); ++i) {
    auto a = m.net.params[i].data<float>();
    auto b = loaded.model.net.params[i].data<float>();
    params_equal = params_equal && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  }
  require(o, params_equal, "checkpoint parameters not bitwise equal after load");

  gmm::GmmSpec world = desk_world();
  Rng rng(5);
  data::Dataset ds = gmm::gmm_sample(world, 32, rng);
  data::save_dataset(ds, dir, "ds");
  data::Dataset back = data::load_dataset(dir / "ds.manifest.json");
  data::save_dataset(back, dir, "ds2");
  require(o, bytes(dir / "ds.images.bin") == bytes(dir / "ds2.images.bin"),
          "dataset image blob not byte-stable");
  require(o, bytes(dir / "ds.labels.bin") == bytes(dir / "ds2.labels.bin"),
          "dataset label blob not byte-stable");

  {
    std::ofstream f(dir / "cifar.bin", std::ios::binary);
    for (int rec = 0; rec < 10; ++rec) {
      f.put(static_cast<char>(rec % 10));
      for (int i = 0; i < 3072; ++i) f.put(static_cast<char>((rec * 7 + i) % 256));
    }
  }
  data::Dataset cifar = data::read_cifar10_binary(dir / "cifar.bin");
  require(o, cifar.count() == 10, "cifar reader record count");
  require(o, cifar.batch.labels[4] == 5, "cifar reader label shift");
  bool caught = false;
  try {
    std::ofstream f(dir / "bad.bin", std::ios::binary);
    f.write("xyz", 3);
    f.close();
    data::read_cifar10_binary(dir / "bad.bin");
  } catch (const DataError&) {
    caught = true;
  }
  require(o, caught, "cifar reader accepted a malformed file");
  o.detail << "  round trips bitwise stable; cifar structure validated";
  return o;
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> fn;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "autodiff matches finite differences", criterion_autodiff},
      {2, "tweedie identity in the oracle world", criterion_tweedie},
      {3, "dsm analytic optimum", criterion_dsm_optimum},
      {4, "joint-model algebra", criterion_joint_algebra},
      {5, "denoiser jacobian conservativity", criterion_conservativity},
      {6, "local linearity (homogeneous config)", criterion_local_linearity},
      {7, "desk-scale learning vs oracles", criterion_desk_learning},
      {8, "bias-variance constants and regimes", criterion_biasvar},
      {9, "robustness direction joint vs ce-only", criterion_robustness},
      {10, "format integrity", criterion_formats},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "  exception: " << e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2d. %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.number, c.name, secs);
    std::string detail = o.detail.str();
    if (!detail.empty()) {
      if (detail.back() == '\n') detail.pop_back();
      std::printf("%s\n", detail.c_str());
    }
    if (!o.pass) ++failures;
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
