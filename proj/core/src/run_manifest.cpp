#include "detailfusion/cli/run_manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "detailfusion/common/digest.hpp"
#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/dataset_io.hpp"

namespace dfusion {

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},          {"argv", argv},
          {"seed", seed},                {"config_digest", config_digest},
          {"dataset_digests", dataset_digests}, {"checkpoint_digests", checkpoint_digests},
          {"artifacts", artifacts},      {"started_utc", started_utc},
          {"finished_utc", finished_utc}};
}

void RunManifest::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json().dump(2) << "\n";
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string dataset_digest(const std::filesystem::path& dir) {
  std::string acc;
  for (const char* name : {kManifestFile, kGalleryBinFile, kGalleryIdxFile}) {
    acc += name;
    acc += '=';
    acc += sha256_file(dir / name);
    acc += '\n';
  }
  return sha256_hex(std::string_view(acc));
}

}  // namespace dfusion
