#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "detailfusion/training/model.hpp"

namespace dfusion {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int stage = 0;                  // last completed stage; 0 = fresh initialisation
  std::uint64_t seed = 0;         // initialisation seed of the model
  std::string config_digest;      // digest of the config that produced this checkpoint
  nlohmann::json history = nlohmann::json::array();  // one record per completed stage/phase
  nlohmann::json rng = nlohmann::json::object();     // stream position of the last run

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

// Binary layout: 8-byte magic, u32 version, u64 metadata length + JSON,
// u32 group count + (name, frozen flag) per group, u32 tensor count +
// (name, group index, rows, cols, float32 LE payload) per tensor. All
// integers little-endian.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dfusion
