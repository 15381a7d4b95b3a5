#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "jescore/joint_head.hpp"
#include "jescore/trainer.hpp"

namespace jescore::ckpt {

/// Versioned binary container: magic "JESM", format version, length-prefixed
/// JSON header (architecture, training config, iteration, metrics snapshot,
/// named-tensor index with dtype/shape/offset), then a little-endian tensor
/// payload. Save -> load -> save is byte-identical.
struct Checkpoint {
  nn::ArchConfig arch;
  train::TrainConfig train_cfg;
  int num_classes = 0;
  int64_t iteration = 0;
  std::map<std::string, double> metrics;
  nn::JointModel model;
  train::OptimizerState opt;
  bool has_optimizer = false;
};

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const nn::JointModel& model, const train::TrainConfig& cfg,
                           const train::OptimizerState& opt, int64_t iteration,
                           std::map<std::string, double> metrics = {});

// JSON bindings for the config types (also used by the CLI).
void arch_to_json(const nn::ArchConfig& a, nlohmann::ordered_json& j);
nn::ArchConfig arch_from_json(const nlohmann::ordered_json& j);
void train_to_json(const train::TrainConfig& t, nlohmann::ordered_json& j);
train::TrainConfig train_from_json(const nlohmann::ordered_json& j);

}  // namespace jescore::ckpt
