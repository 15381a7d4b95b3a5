#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "jescore/checkpoint.hpp"
#include "jescore/errors.hpp"
#include "jescore/gmm.hpp"
#include "support/oracles.hpp"

using namespace jescore;
using namespace jescore::ckpt;

namespace {

nn::ArchConfig tiny_arch() {
  nn::ArchConfig c;
  c.input_channels = 1;
  c.stage_channels = {8, 16};
  c.blocks_per_stage = {1, 1};
  c.feature_dim = 16;
  c.groups = 4;
  return c;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "jescore_ckpt_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every tensor bitwise") {
  nn::JointModel m = nn::build_joint_model(tiny_arch(), 2, 11);
  train::TrainConfig cfg;
  cfg.iterations = 100;
  train::OptimizerState opt = train::init_optimizer(m.net.params);
  opt.first_moment.push_back(Tensor::zeros(m.head.W.shape(), m.head.W.dtype()));
  opt.first_moment.push_back(Tensor::zeros(m.head.w.shape(), m.head.w.dtype()));
  opt.second_moment.push_back(Tensor::zeros(m.head.W.shape(), m.head.W.dtype()));
  opt.second_moment.push_back(Tensor::zeros(m.head.w.shape(), m.head.w.dtype()));
  opt.step = 7;
  // Touch a few moments so the payload is not all zeros.
  opt.first_moment[0].set(0, 0.25);
  opt.second_moment[1].set(1, 1.5);

  Checkpoint c = make_checkpoint(m, cfg, opt, 42, {{"ce_loss", 0.5}});
  auto path = temp_dir() / "model.jesm";
  save_checkpoint(c, path);
  Checkpoint back = load_checkpoint(path);

  CHECK(back.iteration == 42);
  CHECK(back.num_classes == 2);
  CHECK(back.metrics.at("ce_loss") == 0.5);
  CHECK(back.opt.step == 7);
  REQUIRE(back.model.net.param_names == m.net.param_names);
  for (size_t i = 0; i < m.net.params.size(); ++i) {
    auto a = m.net.params[i].data<float>();
    auto b = back.model.net.params[i].data<float>();
    for (size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
  for (int64_t i = 0; i < m.head.W.numel(); ++i)
    CHECK(back.model.head.W.data<float>()[static_cast<size_t>(i)] ==
          m.head.W.data<float>()[static_cast<size_t>(i)]);
  CHECK(back.opt.first_moment[0].at(0) == 0.25);
  CHECK(back.opt.second_moment[1].at(1) == 1.5);
}

TEST_CASE("save(load(file)) reproduces the file byte for byte") {
  nn::JointModel m = nn::build_joint_model(tiny_arch(), 3, 13);
  train::TrainConfig cfg;
  cfg.iterations = 10;
  train::OptimizerState opt;
  Checkpoint c = make_checkpoint(m, cfg, opt, 10);
  auto dir = temp_dir();
  save_checkpoint(c, dir / "a.jesm");
  Checkpoint loaded = load_checkpoint(dir / "a.jesm");
  save_checkpoint(loaded, dir / "b.jesm");
  CHECK(file_bytes(dir / "a.jesm") == file_bytes(dir / "b.jesm"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto dir = temp_dir();
  {
    std::ofstream f(dir / "bad.jesm", std::ios::binary);
    f.write("NOPE", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.jesm"), DataError);

  nn::JointModel m = nn::build_joint_model(tiny_arch(), 2, 5);
  train::TrainConfig cfg;
  cfg.iterations = 1;
  Checkpoint c = make_checkpoint(m, cfg, {}, 1);
  save_checkpoint(c, dir / "ok.jesm");
  std::string bytes = file_bytes(dir / "ok.jesm");
  {
    std::ofstream f(dir / "trunc.jesm", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.jesm"), DataError);
}

TEST_CASE("training resume from a checkpoint reproduces the uninterrupted trace") {
  gmm::GmmSpec g = gmm::make_cosine_spec(2, {1, 8, 8}, 40.0, 128.0, 25.0);
  Rng rng(23);
  data::Dataset ds = gmm::gmm_sample(g, 32, rng);

  train::TrainConfig cfg;
  cfg.iterations = 6;
  cfg.batch_classification = 8;
  cfg.batch_denoising = 4;
  cfg.crop_pad = 1;
  cfg.metrics_every = 1;
  cfg.seed = 77;
  cfg.deterministic = true;

  // One uninterrupted run that snapshots at iteration 3 via the hook.
  cfg.checkpoint_every = 3;
  auto path = temp_dir() / "resume.jesm";
  nn::JointModel full = nn::build_joint_model(tiny_arch(), 2, 99);
  train::OptimizerState opt_full;
  train::TrainHooks hooks;
  hooks.on_checkpoint = [&](const nn::JointModel& mm, const train::OptimizerState& oo,
                            int64_t iter, bool) {
    if (iter == 3) save_checkpoint(make_checkpoint(mm, cfg, oo, iter), path);
  };
  train::TrainReport full_rep = train::train(full, ds, cfg, opt_full, 0, hooks);

  Checkpoint c = load_checkpoint(path);
  train::TrainReport resumed = train::train(c.model, ds, cfg, c.opt, c.iteration);

  // The resumed tail must coincide exactly with the uninterrupted run.
  REQUIRE(full_rep.trace.size() == 6);
  REQUIRE(resumed.trace.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(resumed.trace[i].ce_loss == full_rep.trace[i + 3].ce_loss);
    CHECK(resumed.trace[i].dsm_loss == full_rep.trace[i + 3].dsm_loss);
  }
  for (size_t i = 0; i < full.net.params.size(); ++i) {
    auto a = full.net.params[i].data<float>();
    auto b = c.model.net.params[i].data<float>();
    for (size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
}
