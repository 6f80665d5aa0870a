#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "detailfusion/data/scene.hpp"
#include "detailfusion/data/vocabulary.hpp"

namespace dfusion {

enum class DatasetKind { kEditPretrain, kCirFinetune };
std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& s);

inline constexpr int kSubsetGroupSize = 6;

struct GenerationConfig {
  int grid_size = 4;
  int resolution = 32;
  int min_objects = 2;
  int max_objects = 5;
  // cir_finetune only: edits per modification text, queries drawn per group,
  // and an optional exact gallery size reached by appending distractor scenes.
  int max_edits = 3;
  int triplets_per_group = 3;
  int gallery_size = 0;

  void validate() const;
  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

struct GalleryImage {
  int id = 0;
  SceneDescription scene;
  Image image;
};

struct Triplet {
  int reference_id = 0;
  int target_id = 0;
  std::vector<int> tokens;
  std::vector<AtomicEdit> edits;
  std::optional<int> subset_group;
};

struct TripletDataset {
  DatasetKind kind = DatasetKind::kEditPretrain;
  std::uint64_t seed = 0;
  int count = 0;
  GenerationConfig config;
  Vocabulary vocabulary = Vocabulary::standard();
  std::vector<GalleryImage> gallery;  // gallery[i].id == i
  std::vector<Triplet> triplets;
  std::map<int, std::vector<int>> groups;  // group id -> member image ids

  const GalleryImage& image(int id) const;
  // Throws ValidationError on any broken structural invariant.
  void validate() const;
};

TripletDataset generate_edit_pretrain_set(std::uint64_t seed, int count, const GenerationConfig& config = {});
TripletDataset generate_cir_finetune_set(std::uint64_t seed, int count, const GenerationConfig& config = {});

// Mean per-pixel L1 distance between two images of the same shape.
double mean_l1_distance(const Image& a, const Image& b);

}  // namespace dfusion
