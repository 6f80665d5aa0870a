#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detailfusion/data/scene.hpp"
#include "detailfusion/encoders/encoders.hpp"

namespace dfusion {

// Unit-normalised D(I) CLS features, one row per gallery id.
struct GalleryIndex {
  std::vector<int> ids;
  Mat<float> features;

  int size() const { return static_cast<int>(ids.size()); }
};

// Validates ids (unique) and rows (unit norm within 1e-5 in float).
GalleryIndex make_index(std::vector<int> ids, Mat<float> features);

// Encodes every image with the image path of the DI branch, in the given order.
GalleryIndex build_index(const std::vector<int>& ids, const std::vector<const Image*>& images,
                         const DualEncoder<float>& encoder, int batch_size = 64);

enum class RankMode { kSingle, kScoreSum };

struct RankedResult {
  int query_id = 0;
  std::vector<int> ids;
  std::vector<double> scores;
  std::vector<double> relative;  // softmax of the query's similarities over the whole gallery
};

// Similarity of one query against every gallery row (dot products on unit vectors).
std::vector<double> gallery_scores(std::span<const float> query, const GalleryIndex& index);

// Top-k by descending score; ties broken by ascending id. In kScoreSum mode
// the score is the sum of both queries' similarities; `second` is ignored in
// kSingle mode.
RankedResult retrieve(std::span<const float> query, const GalleryIndex& index, int k, RankMode mode = RankMode::kSingle,
                      std::span<const float> second = {});

// Ranks precomputed scores; shared by retrieve and the evaluation path.
RankedResult rank_scores(const std::vector<double>& scores, const std::vector<int>& ids, int k);

std::vector<double> relative_scores(std::span<const double> similarities);

// ground_truth: query id -> target id.
double recall_at_k(const std::vector<RankedResult>& results, const std::map<int, int>& ground_truth, int k);
// Ranking restricted to the query's 6-member group (query id -> member ids).
// Each result must rank the target, so pass full-gallery rankings.
double recall_subset_at_k(const std::vector<RankedResult>& results, const std::map<int, int>& ground_truth,
                          const std::map<int, std::vector<int>>& groups, int k);

nlohmann::json to_json(const RankedResult& r);

}  // namespace dfusion
