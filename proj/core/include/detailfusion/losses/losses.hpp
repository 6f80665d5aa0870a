#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "detailfusion/nn/tensor.hpp"

namespace dfusion {

inline constexpr int kGroupNegatives = 5;

// Rows are unit-normalised CLS features, so similarity is a dot product.
template <typename T>
struct ContrastiveBatch {
  Mat<T> query;                 // B x d
  Mat<T> target;                // B x d, row i is the positive of query i
  std::optional<Mat<T>> ref;    // B x d, reference images (hard negatives)
  std::optional<Mat<T>> group;  // (B * 5) x d, rows [5i, 5i+5) belong to item i
  double tau = 0.07;
};

template <typename T>
struct LossResult {
  double value = 0.0;
  Mat<T> d_query;
  Mat<T> d_target;
  Mat<T> d_ref;
  Mat<T> d_group;
  Mat<T> d_gallery;
};

// Batch InfoNCE: positives on the diagonal, other targets as negatives.
template <typename T>
LossResult<T> loss_gm(const ContrastiveBatch<T>& batch);

// InfoNCE whose denominator also contains every reference image of the batch.
template <typename T>
LossResult<T> loss_di(const ContrastiveBatch<T>& batch);

// loss_di plus the five group members of item i, each counted once for query i.
template <typename T>
LossResult<T> loss_di_sgn(const ContrastiveBatch<T>& batch);

// Fused compositor outputs against targets; same form as loss_gm.
template <typename T>
LossResult<T> loss_compositor(const ContrastiveBatch<T>& batch);

template <typename T>
struct JointLossResult {
  double value = 0.0;
  LossResult<T> di;
  LossResult<T> gm;  // gradients already scaled by gamma
};

// loss_di(di_batch) + gamma * loss_gm(gm_batch). gamma < 0 is a config error;
// gamma == 0 degenerates to loss_di.
template <typename T>
JointLossResult<T> loss_joint(const ContrastiveBatch<T>& di_batch, const ContrastiveBatch<T>& gm_batch, double gamma);

// Denominator runs over the whole gallery. target_ids[i] must appear in
// gallery_ids; d_target in the result is empty.
template <typename T>
LossResult<T> loss_gm_spn(const Mat<T>& query, const std::vector<std::int64_t>& target_ids, const Mat<T>& gallery,
                          const std::vector<std::int64_t>& gallery_ids, double tau);

template <typename T>
LossResult<T> loss_compositor_spn(const Mat<T>& fused, const std::vector<std::int64_t>& target_ids,
                                  const Mat<T>& gallery, const std::vector<std::int64_t>& gallery_ids, double tau);

}  // namespace dfusion
