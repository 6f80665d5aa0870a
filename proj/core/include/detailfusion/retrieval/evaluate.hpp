#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detailfusion/data/dataset.hpp"
#include "detailfusion/retrieval/retrieval.hpp"
#include "detailfusion/training/model.hpp"

namespace dfusion {

enum class EvalMode { kDI, kGM, kScoreSum, kCompositor };
std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);
inline const std::vector<EvalMode> kAllEvalModes = {EvalMode::kDI, EvalMode::kGM, EvalMode::kScoreSum,
                                                    EvalMode::kCompositor};

// Recalls are fractions in [0, 1].
struct RecallSet {
  int queries = 0;
  double r1 = 0, r5 = 0, r10 = 0, r50 = 0;
  double rs1 = 0, rs2 = 0, rs3 = 0;
  double avg = 0;
};

// (R@5 + Rs@1) / 2, unrounded.
double aggregate_avg(double recall5, double recall_subset1);
void aggregate(RecallSet& r);

struct MetricsReport {
  EvalMode mode = EvalMode::kDI;
  RecallSet overall;
  std::map<int, RecallSet> by_edit_count;  // category = number of atomic edits in the query text
};

struct EvaluationReport {
  std::string dataset_kind;
  std::uint64_t dataset_seed = 0;
  int gallery_size = 0;
  int checkpoint_stage = 0;
  std::vector<MetricsReport> modes;

  const MetricsReport& at(EvalMode m) const;
  nlohmann::json to_json() const;
};

// Full-gallery and subset evaluation of every triplet in `ds`. Every gallery
// image is a candidate, including each query's own reference image.
EvaluationReport evaluate(const Model& model, const TripletDataset& ds,
                          const std::vector<EvalMode>& modes = kAllEvalModes, int batch_size = 64);

nlohmann::json recall_json(const RecallSet& r);

}  // namespace dfusion
