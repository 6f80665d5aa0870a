#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "detailfusion/data/dataset.hpp"
#include "detailfusion/training/checkpoint.hpp"
#include "detailfusion/training/train_config.hpp"

namespace dfusion {

struct LossTrace {
  std::vector<std::string> columns;  // first two are always step, epoch
  std::vector<std::vector<double>> rows;

  std::vector<double> column(const std::string& name) const;
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct StageOutput {
  Checkpoint checkpoint;
  LossTrace trace;
  int best_epoch = -1;                  // stage 1 only
  std::vector<double> val_recall_at_1;  // stage 1, per epoch
};

// Stage 1: DI branch (+ Linear_H / Linear_I) on edit data. `init` may be null
// for a fresh model; `val` replaces the held-out tail split when given.
StageOutput run_stage1(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint* init = nullptr,
                       const TripletDataset* val = nullptr);

// Stage 2: joint DI + GM fine-tuning. A null `init` skips stage 1.
StageOutput run_stage2(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint* init = nullptr);

// Stage 3: compositor only; branches frozen.
StageOutput run_stage3(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint& init);

// Full-gallery (SPN) phase for the GM branch (stage = 2) or the compositor
// (stage = 3), selected by cfg.spn_target.
StageOutput run_spn_phase(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint& init);

}  // namespace dfusion
