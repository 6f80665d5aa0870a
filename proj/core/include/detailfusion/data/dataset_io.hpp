#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "detailfusion/data/dataset.hpp"

namespace dfusion {

// On-disk layout of a dataset directory:
//   manifest.json  kind, seed, generation config, vocabulary, scenes, triplets, groups
//   gallery.bin    float32 little-endian HWC images, concatenated in id order
//   gallery.idx    text: "<id> <byte offset> <byte length>" per image after a header line
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kGalleryBinFile = "gallery.bin";
inline constexpr const char* kGalleryIdxFile = "gallery.idx";

void save_dataset(const TripletDataset& ds, const std::filesystem::path& dir);

// Loads and validates a dataset. With `verify_render`, every stored image is
// compared byte-for-byte against a fresh rendering of its scene.
TripletDataset load_dataset(const std::filesystem::path& dir, bool verify_render = false);

nlohmann::json scene_to_json(const SceneDescription& s);
SceneDescription scene_from_json(const nlohmann::json& j);
nlohmann::json edit_to_json(const AtomicEdit& e);
AtomicEdit edit_from_json(const nlohmann::json& j);

// Little-endian float32 helpers shared with the checkpoint format.
void append_f32_le(std::string& out, const float* data, std::size_t n);
void read_f32_le(const char* bytes, float* out, std::size_t n);

}  // namespace dfusion
