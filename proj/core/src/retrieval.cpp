#include "detailfusion/retrieval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

GalleryIndex make_index(std::vector<int> ids, Mat<float> features) {
  if (static_cast<Eigen::Index>(ids.size()) != features.rows()) throw ShapeError("one feature row per gallery id");
  std::unordered_set<int> seen;
  for (int id : ids)
    if (!seen.insert(id).second) throw ValidationError("duplicate gallery id " + std::to_string(id));
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    if (std::abs(static_cast<double>(features.row(r).norm()) - 1.0) > 1e-5)
      throw ValidationError("gallery feature " + std::to_string(ids[static_cast<std::size_t>(r)]) + " is not unit norm");
  return GalleryIndex{std::move(ids), std::move(features)};
}

GalleryIndex build_index(const std::vector<int>& ids, const std::vector<const Image*>& images,
                         const DualEncoder<float>& encoder, int batch_size) {
  if (ids.size() != images.size()) throw ShapeError("one image per gallery id");
  const int n_tok = encoder.config.num_tokens();
  Mat<float> feats(static_cast<Eigen::Index>(ids.size()), encoder.config.feature_dim);
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Image*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                    images.begin() + static_cast<std::ptrdiff_t>(end));
    const int b = static_cast<int>(chunk.size());
    Mat<float> tokens = encoder.encode_images(encoder.vision_encode(chunk), b);
    Mat<float> cls(b, tokens.cols());
    for (int i = 0; i < b; ++i) cls.row(i) = tokens.row(static_cast<Eigen::Index>(i) * n_tok);
    feats.middleRows(static_cast<Eigen::Index>(start), b) = l2_normalize_rows(cls);
  }
  return make_index(ids, std::move(feats));
}

std::vector<double> gallery_scores(std::span<const float> query, const GalleryIndex& index) {
  if (index.size() == 0) throw UsageError("retrieval over an empty gallery");
  if (static_cast<Eigen::Index>(query.size()) != index.features.cols()) throw ShapeError("query dimension mismatch");
  std::vector<double> s(static_cast<std::size_t>(index.size()));
  for (Eigen::Index r = 0; r < index.features.rows(); ++r) {
    double acc = 0.0;
    const float* row = index.features.row(r).data();
    for (std::size_t c = 0; c < query.size(); ++c) acc += static_cast<double>(row[c]) * query[c];
    s[static_cast<std::size_t>(r)] = acc;
  }
  return s;
}

std::vector<double> relative_scores(std::span<const double> sims) {
  if (sims.empty()) throw UsageError("relative scores of an empty gallery");
  if (sims.size() == 1) return {1.0};
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> out(sims.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) z += out[i] = std::exp(sims[i] - mx);
  for (double& v : out) v /= z;
  return out;
}

RankedResult rank_scores(const std::vector<double>& scores, const std::vector<int>& ids, int k) {
  if (ids.empty()) throw UsageError("retrieval over an empty gallery");
  if (k < 1 || k > static_cast<int>(ids.size()))
    throw UsageError("k = " + std::to_string(k) + " outside [1, " + std::to_string(ids.size()) + "]");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  const auto rel = relative_scores(scores);
  RankedResult r;
  for (int i = 0; i < k; ++i) {
    const std::size_t j = order[static_cast<std::size_t>(i)];
    r.ids.push_back(ids[j]);
    r.scores.push_back(scores[j]);
    r.relative.push_back(rel[j]);
  }
  return r;
}

RankedResult retrieve(std::span<const float> query, const GalleryIndex& index, int k, RankMode mode,
                      std::span<const float> second) {
  std::vector<double> s = gallery_scores(query, index);
  if (mode == RankMode::kScoreSum) {
    const std::vector<double> s2 = gallery_scores(second, index);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += s2[i];
  }
  return rank_scores(s, index.ids, k);
}

namespace {
int target_of(const std::map<int, int>& gt, int query) {
  auto it = gt.find(query);
  if (it == gt.end()) throw ValidationError("no ground truth for query " + std::to_string(query));
  return it->second;
}
}  // namespace

double recall_at_k(const std::vector<RankedResult>& results, const std::map<int, int>& ground_truth, int k) {
  if (results.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : results) {
    const int target = target_of(ground_truth, r.query_id);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), r.ids.size());
    if (std::find(r.ids.begin(), r.ids.begin() + static_cast<std::ptrdiff_t>(n), target) !=
        r.ids.begin() + static_cast<std::ptrdiff_t>(n))
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double recall_subset_at_k(const std::vector<RankedResult>& results, const std::map<int, int>& ground_truth,
                          const std::map<int, std::vector<int>>& groups, int k) {
  if (results.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : results) {
    const int target = target_of(ground_truth, r.query_id);
    auto g = groups.find(r.query_id);
    if (g == groups.end()) throw ValidationError("no subset group for query " + std::to_string(r.query_id));
    const std::unordered_set<int> members(g->second.begin(), g->second.end());
    int rank = 0;
    bool found = false;
    for (int id : r.ids) {
      if (!members.count(id)) continue;
      if (id == target) {
        found = true;
        break;
      }
      ++rank;
    }
    if (!found)
      throw ValidationError("ranking for query " + std::to_string(r.query_id) +
                            " does not reach its target; subset recall needs full rankings with the target in its group");
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

nlohmann::json to_json(const RankedResult& r) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    items.push_back({{"rank", i + 1}, {"id", r.ids[i]}, {"score", r.scores[i]}, {"relative", r.relative[i]}});
  return {{"query_id", r.query_id}, {"results", items}};
}

}  // namespace dfusion
