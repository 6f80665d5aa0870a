#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dfusion {

// Provenance record written next to every CLI output.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::map<std::string, std::string> dataset_digests;     // path -> digest
  std::map<std::string, std::string> checkpoint_digests;  // path -> digest
  std::map<std::string, std::string> artifacts;           // role -> path
  std::string started_utc;
  std::string finished_utc;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

std::string utc_timestamp();

// SHA-256 over the digests of the dataset directory's files.
std::string dataset_digest(const std::filesystem::path& dir);

}  // namespace dfusion
