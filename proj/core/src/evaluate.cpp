#include "detailfusion/retrieval/evaluate.hpp"

#include <numeric>

#include "detailfusion/common/decimal.hpp"
#include "detailfusion/common/errors.hpp"
#include "detailfusion/training/features.hpp"

namespace dfusion {

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kDI: return "di";
    case EvalMode::kGM: return "gm";
    case EvalMode::kScoreSum: return "score_sum";
    case EvalMode::kCompositor: return "compositor";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  for (EvalMode m : kAllEvalModes)
    if (to_string(m) == s) return m;
  throw UsageError("unknown evaluation mode '" + s + "'");
}

double aggregate_avg(double recall5, double recall_subset1) { return (recall5 + recall_subset1) / 2.0; }

void aggregate(RecallSet& r) { r.avg = aggregate_avg(r.r5, r.rs1); }

const MetricsReport& EvaluationReport::at(EvalMode m) const {
  for (const auto& r : modes)
    if (r.mode == m) return r;
  throw UsageError("report has no '" + to_string(m) + "' section");
}

nlohmann::json recall_json(const RecallSet& r) {
  auto pct = [](double x) { return format_fixed(100.0 * x, 2); };
  return {{"queries", r.queries},
          {"recall", {{"R@1", r.r1}, {"R@5", r.r5}, {"R@10", r.r10}, {"R@50", r.r50}}},
          {"recall_subset", {{"Rs@1", r.rs1}, {"Rs@2", r.rs2}, {"Rs@3", r.rs3}}},
          {"avg", r.avg},
          {"percent",
           {{"R@1", pct(r.r1)},
            {"R@5", pct(r.r5)},
            {"R@10", pct(r.r10)},
            {"R@50", pct(r.r50)},
            {"Rs@1", pct(r.rs1)},
            {"Rs@2", pct(r.rs2)},
            {"Rs@3", pct(r.rs3)},
            {"Avg", pct(r.avg)}}}};
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json out = {{"dataset", {{"kind", dataset_kind}, {"seed", dataset_seed}}},
                        {"gallery_size", gallery_size},
                        {"checkpoint_stage", checkpoint_stage}};
  nlohmann::json m = nlohmann::json::object();
  for (const auto& r : modes) {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [edits, rs] : r.by_edit_count) cats[std::to_string(edits) + "_edits"] = recall_json(rs);
    m[to_string(r.mode)] = {{"overall", recall_json(r.overall)}, {"by_edit_count", cats}};
  }
  out["modes"] = m;
  return out;
}

namespace {

RecallSet score_results(const std::vector<RankedResult>& results, const std::map<int, int>& gt,
                        const std::map<int, std::vector<int>>& groups) {
  RecallSet r;
  r.queries = static_cast<int>(results.size());
  if (results.empty()) return r;
  r.r1 = recall_at_k(results, gt, 1);
  r.r5 = recall_at_k(results, gt, 5);
  r.r10 = recall_at_k(results, gt, 10);
  r.r50 = recall_at_k(results, gt, 50);
  if (!groups.empty()) {
    r.rs1 = recall_subset_at_k(results, gt, groups, 1);
    r.rs2 = recall_subset_at_k(results, gt, groups, 2);
    r.rs3 = recall_subset_at_k(results, gt, groups, 3);
  }
  aggregate(r);
  return r;
}

}  // namespace

EvaluationReport evaluate(const Model& model, const TripletDataset& ds, const std::vector<EvalMode>& modes,
                          int batch_size) {
  if (ds.triplets.empty()) throw UsageError("evaluation dataset has no triplets");
  if (ds.config.resolution != model.config.image_size)
    throw ConfigError("dataset resolution does not match the model image size");
  const DualEncoder<float>& enc = model.encoder;
  const Mat<float> vision = vision_features(enc, ds);

  std::vector<int> ids(ds.gallery.size());
  std::iota(ids.begin(), ids.end(), 0);
  const EncodedSet gallery = encode_image_set(enc, vision, ids, batch_size);
  const GalleryIndex index = make_index(ids, gallery.cls);

  std::vector<int> trip(ds.triplets.size());
  std::iota(trip.begin(), trip.end(), 0);
  std::map<int, int> gt;
  std::map<int, std::vector<int>> groups;
  for (int i : trip) {
    const Triplet& t = ds.triplets[static_cast<std::size_t>(i)];
    gt[i] = t.target_id;
    if (t.subset_group) groups[i] = ds.groups.at(*t.subset_group);
  }

  bool need_di = false, need_gm = false;
  for (EvalMode m : modes) {
    need_di |= m != EvalMode::kGM;
    need_gm |= m != EvalMode::kDI;
  }
  EncodedSet di, gm;
  if (need_di) di = encode_query_set(enc, vision, ds, trip, Branch::kDI, batch_size);
  if (need_gm) gm = encode_query_set(enc, vision, ds, trip, Branch::kGM, batch_size);

  EvaluationReport report;
  report.dataset_kind = to_string(ds.kind);
  report.dataset_seed = ds.seed;
  report.gallery_size = index.size();
  for (EvalMode mode : modes) {
    Mat<float> fused;
    if (mode == EvalMode::kCompositor) {
      const int K1 = model.config.num_tokens();
      fused.resize(static_cast<Eigen::Index>(trip.size()), model.config.feature_dim);
      for (std::size_t s = 0; s < trip.size(); s += static_cast<std::size_t>(batch_size)) {
        const int b = static_cast<int>(std::min(trip.size() - s, static_cast<std::size_t>(batch_size)));
        const auto rows = static_cast<Eigen::Index>(b) * K1;
        fused.middleRows(static_cast<Eigen::Index>(s), b) = l2_normalize_rows(
            model.compositor.forward(gm.tokens.middleRows(static_cast<Eigen::Index>(s) * K1, rows),
                                     di.tokens.middleRows(static_cast<Eigen::Index>(s) * K1, rows), b)
                .fused);
      }
    }
    std::vector<RankedResult> results;
    std::map<int, std::vector<RankedResult>> by_cat;
    for (int i : trip) {
      std::vector<double> scores;
      auto row = [&](const Mat<float>& m) { return std::span<const float>(m.row(i).data(), static_cast<std::size_t>(m.cols())); };
      switch (mode) {
        case EvalMode::kDI: scores = gallery_scores(row(di.cls), index); break;
        case EvalMode::kGM: scores = gallery_scores(row(gm.cls), index); break;
        case EvalMode::kScoreSum: {
          scores = gallery_scores(row(di.cls), index);
          const auto s2 = gallery_scores(row(gm.cls), index);
          for (std::size_t j = 0; j < scores.size(); ++j) scores[j] += s2[j];
          break;
        }
        case EvalMode::kCompositor: scores = gallery_scores(row(fused), index); break;
      }
      RankedResult r = rank_scores(scores, index.ids, index.size());
      r.query_id = i;
      by_cat[static_cast<int>(ds.triplets[static_cast<std::size_t>(i)].edits.size())].push_back(r);
      results.push_back(std::move(r));
    }
    MetricsReport mr;
    mr.mode = mode;
    mr.overall = score_results(results, gt, groups);
    for (const auto& [cat, rs] : by_cat) mr.by_edit_count[cat] = score_results(rs, gt, groups);
    report.modes.push_back(std::move(mr));
  }
  return report;
}

}  // namespace dfusion
