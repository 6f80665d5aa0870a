#include "detailfusion/losses/losses.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

namespace {

template <typename T>
void check_finite(const Mat<T>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite value in ") + what + " features");
}

template <typename T>
void check_features(const Mat<T>& m, Eigen::Index rows, Eigen::Index dim, const char* what) {
  if (m.rows() != rows || m.cols() != dim)
    throw ShapeError(std::string(what) + " features are " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     ", expected " + std::to_string(rows) + "x" + std::to_string(dim));
  check_finite(m, what);
}

template <typename T>
void check_common(const ContrastiveBatch<T>& b) {
  if (b.query.rows() == 0) throw UsageError("contrastive loss on an empty batch");
  if (!(b.tau > 0.0) || !std::isfinite(b.tau)) throw UsageError("temperature must be positive and finite");
  check_finite(b.query, "query");
  check_features(b.target, b.query.rows(), b.query.cols(), "target");
}

// Softmax cross-entropy over a logits matrix, positive column per row.
// Returns mean loss and writes dLoss/dLogits into `dlogits`.
template <typename T>
double softmax_xent(const Mat<T>& logits, const std::vector<Eigen::Index>& positive, Mat<T>& dlogits) {
  const auto B = logits.rows();
  dlogits.resize(B, logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const T mx = logits.row(i).maxCoeff();
    dlogits.row(i) = (logits.row(i).array() - mx).exp().matrix();
    const T z = dlogits.row(i).sum();
    total += static_cast<double>(std::log(z) + mx - logits(i, positive[static_cast<std::size_t>(i)]));
    dlogits.row(i) /= z;
    dlogits(i, positive[static_cast<std::size_t>(i)]) -= T(1);
  }
  dlogits /= static_cast<T>(B);
  return total / static_cast<double>(B);
}

// Shared implementation for the batch-negative family. Candidate columns are
// [targets | refs (optional)] shared by every row, then 5 per-row group columns.
template <typename T>
LossResult<T> batch_contrastive(const ContrastiveBatch<T>& b, bool use_ref, bool use_group) {
  check_common(b);
  const auto B = b.query.rows();
  const auto d = b.query.cols();
  const T inv_tau = static_cast<T>(1.0 / b.tau);
  if (use_ref) {
    if (!b.ref) throw UsageError("loss requires reference features");
    check_features(*b.ref, B, d, "reference");
  }
  if (use_group) {
    if (!b.group) throw UsageError("loss requires group features");
    if (b.group->rows() != B * kGroupNegatives)
      throw UsageError("group features must hold exactly 5 members per item");
    check_features(*b.group, B * kGroupNegatives, d, "group");
  }
  const Eigen::Index cols = B * (use_ref ? 2 : 1) + (use_group ? kGroupNegatives : 0);
  Mat<T> logits(B, cols);
  logits.leftCols(B).noalias() = b.query * b.target.transpose();
  if (use_ref) logits.middleCols(B, B).noalias() = b.query * b.ref->transpose();
  if (use_group) {
    const auto off = cols - kGroupNegatives;
    for (Eigen::Index i = 0; i < B; ++i)
      logits.block(i, off, 1, kGroupNegatives).noalias() =
          b.query.row(i) * b.group->middleRows(i * kGroupNegatives, kGroupNegatives).transpose();
  }
  logits *= inv_tau;

  std::vector<Eigen::Index> positive(static_cast<std::size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) positive[static_cast<std::size_t>(i)] = i;
  Mat<T> dl;
  LossResult<T> r;
  r.value = softmax_xent(logits, positive, dl);
  dl *= inv_tau;

  r.d_query.noalias() = dl.leftCols(B) * b.target;
  r.d_target.noalias() = dl.leftCols(B).transpose() * b.query;
  if (use_ref) {
    r.d_query.noalias() += dl.middleCols(B, B) * *b.ref;
    r.d_ref.noalias() = dl.middleCols(B, B).transpose() * b.query;
  }
  if (use_group) {
    const auto off = cols - kGroupNegatives;
    r.d_group.resize(B * kGroupNegatives, d);
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto g = b.group->middleRows(i * kGroupNegatives, kGroupNegatives);
      r.d_query.row(i).noalias() += dl.block(i, off, 1, kGroupNegatives) * g;
      r.d_group.middleRows(i * kGroupNegatives, kGroupNegatives).noalias() =
          dl.block(i, off, 1, kGroupNegatives).transpose() * b.query.row(i);
    }
  }
  return r;
}

template <typename T>
LossResult<T> gallery_contrastive(const Mat<T>& query, const std::vector<std::int64_t>& target_ids,
                                  const Mat<T>& gallery, const std::vector<std::int64_t>& gallery_ids, double tau) {
  const auto B = query.rows();
  if (B == 0) throw UsageError("contrastive loss on an empty batch");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw UsageError("temperature must be positive and finite");
  if (static_cast<Eigen::Index>(target_ids.size()) != B) throw ShapeError("one target id per query is required");
  if (static_cast<Eigen::Index>(gallery_ids.size()) != gallery.rows()) throw ShapeError("one id per gallery row is required");
  check_finite(query, "query");
  check_features(gallery, gallery.rows(), query.cols(), "gallery");

  std::unordered_map<std::int64_t, Eigen::Index> where;
  where.reserve(gallery_ids.size());
  for (std::size_t j = 0; j < gallery_ids.size(); ++j)
    if (!where.emplace(gallery_ids[j], static_cast<Eigen::Index>(j)).second)
      throw UsageError("gallery id " + std::to_string(gallery_ids[j]) + " appears twice");
  std::vector<Eigen::Index> positive(static_cast<std::size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) {
    auto it = where.find(target_ids[static_cast<std::size_t>(i)]);
    if (it == where.end())
      throw UsageError("gallery is missing target id " + std::to_string(target_ids[static_cast<std::size_t>(i)]));
    positive[static_cast<std::size_t>(i)] = it->second;
  }

  const T inv_tau = static_cast<T>(1.0 / tau);
  Mat<T> logits(B, gallery.rows());
  logits.noalias() = query * gallery.transpose();
  logits *= inv_tau;
  Mat<T> dl;
  LossResult<T> r;
  r.value = softmax_xent(logits, positive, dl);
  dl *= inv_tau;
  r.d_query.noalias() = dl * gallery;
  r.d_gallery.noalias() = dl.transpose() * query;
  return r;
}

}  // namespace

template <typename T>
LossResult<T> loss_gm(const ContrastiveBatch<T>& batch) {
  return batch_contrastive(batch, false, false);
}

template <typename T>
LossResult<T> loss_di(const ContrastiveBatch<T>& batch) {
  return batch_contrastive(batch, true, false);
}

template <typename T>
LossResult<T> loss_di_sgn(const ContrastiveBatch<T>& batch) {
  return batch_contrastive(batch, true, true);
}

template <typename T>
LossResult<T> loss_compositor(const ContrastiveBatch<T>& batch) {
  return batch_contrastive(batch, false, false);
}

template <typename T>
JointLossResult<T> loss_joint(const ContrastiveBatch<T>& di_batch, const ContrastiveBatch<T>& gm_batch, double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("loss trade-off gamma must be non-negative");
  if (di_batch.query.rows() != gm_batch.query.rows()) throw UsageError("DI and GM sub-batches differ in size");
  JointLossResult<T> r;
  r.di = loss_di(di_batch);
  r.gm = loss_gm(gm_batch);
  const T g = static_cast<T>(gamma);
  r.gm.d_query *= g;
  r.gm.d_target *= g;
  r.value = r.di.value + gamma * r.gm.value;
  return r;
}

template <typename T>
LossResult<T> loss_gm_spn(const Mat<T>& query, const std::vector<std::int64_t>& target_ids, const Mat<T>& gallery,
                          const std::vector<std::int64_t>& gallery_ids, double tau) {
  return gallery_contrastive(query, target_ids, gallery, gallery_ids, tau);
}

template <typename T>
LossResult<T> loss_compositor_spn(const Mat<T>& fused, const std::vector<std::int64_t>& target_ids,
                                  const Mat<T>& gallery, const std::vector<std::int64_t>& gallery_ids, double tau) {
  return gallery_contrastive(fused, target_ids, gallery, gallery_ids, tau);
}

#define DFUSION_INSTANTIATE(T)                                                                                    \
  template LossResult<T> loss_gm<T>(const ContrastiveBatch<T>&);                                                  \
  template LossResult<T> loss_di<T>(const ContrastiveBatch<T>&);                                                  \
  template LossResult<T> loss_di_sgn<T>(const ContrastiveBatch<T>&);                                              \
  template LossResult<T> loss_compositor<T>(const ContrastiveBatch<T>&);                                          \
  template JointLossResult<T> loss_joint<T>(const ContrastiveBatch<T>&, const ContrastiveBatch<T>&, double);      \
  template LossResult<T> loss_gm_spn<T>(const Mat<T>&, const std::vector<std::int64_t>&, const Mat<T>&,            \
                                        const std::vector<std::int64_t>&, double);                                \
  template LossResult<T> loss_compositor_spn<T>(const Mat<T>&, const std::vector<std::int64_t>&, const Mat<T>&,    \
                                                const std::vector<std::int64_t>&, double);

DFUSION_INSTANTIATE(float)
DFUSION_INSTANTIATE(double)

}  // namespace dfusion
