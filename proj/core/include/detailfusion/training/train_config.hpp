#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "detailfusion/encoders/model_config.hpp"

namespace dfusion {

enum class SpnTarget { kNone, kGm, kCompositor };
std::string to_string(SpnTarget t);

// Flat `key = value` training configuration. Absent keys take the defaults
// below; epochs and batch size default per stage.
struct TrainConfig {
  int stage = 1;
  std::string dataset;
  std::string val_dataset;
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string loss_trace;

  int epochs = 5;
  int batch_size = 64;
  int max_steps = 0;  // 0 = no cap
  double lr = 1e-3;
  double tau = 0.07;
  double gamma = 2.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.05;
  std::uint64_t seed = 7;
  double val_fraction = 0.1;

  bool sgn = false;
  SpnTarget spn_target = SpnTarget::kNone;
  bool cache_features = true;
  bool vision_trainable = false;
  bool freeze_branches = true;

  ModelConfig model;

  void validate() const;
  // Canonical text form; parse_train_config(to_text()) reproduces *this.
  std::string to_text() const;
  std::string digest() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct StageSchedule {
  int epochs;
  int batch_size;
};
StageSchedule default_schedule(int stage);

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace dfusion
