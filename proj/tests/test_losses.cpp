#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "detailfusion/common/errors.hpp"
#include "detailfusion/common/rng.hpp"
#include "detailfusion/losses/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace dfusion;
namespace dt = dfusion::testing;

namespace {

struct Sample {
  ContrastiveBatch<double> batch;
  std::vector<std::int64_t> target_ids;
};

Sample random_sample(Rng& rng, int B, int d, double tau = 0.07) {
  Sample s;
  s.batch.query = dt::random_unit_rows(rng, B, d);
  s.batch.target = dt::random_unit_rows(rng, B, d);
  s.batch.ref = dt::random_unit_rows(rng, B, d);
  s.batch.group = dt::random_unit_rows(rng, B * kGroupNegatives, d);
  s.batch.tau = tau;
  for (int i = 0; i < B; ++i) s.target_ids.push_back(100 + 3 * i);
  return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

Mat<double> permute_rows(const Mat<double>& m, const std::vector<int>& perm, int block = 1) {
  Mat<double> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out.middleRows(static_cast<Eigen::Index>(i) * block, block) = m.middleRows(perm[i] * block, block);
  return out;
}

Mat<double> unit_row(int d, int axis) {
  Mat<double> m = Mat<double>::Zero(1, d);
  m(0, axis) = 1.0;
  return m;
}

}  // namespace

TEST(LossOracle, AllLossesMatchNaiveLoops) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int B = 1 + static_cast<int>(rng.below(16));
    const int d = trial % 2 == 0 ? 4 : 64;
    const double tau = 0.03 + rng.uniform();
    auto s = random_sample(rng, B, d, tau);
    const auto& b = s.batch;
    const double gm = dt::oracle_gm(b.query, b.target, tau);
    const double di = dt::oracle_di(b.query, b.target, *b.ref, tau);
    ASSERT_LT(rel(loss_gm(b).value, gm), 1e-6) << trial;
    ASSERT_LT(rel(loss_compositor(b).value, gm), 1e-6) << trial;
    ASSERT_LT(rel(loss_di(b).value, di), 1e-6) << trial;
    ASSERT_LT(rel(loss_di_sgn(b).value, dt::oracle_di_sgn(b.query, b.target, *b.ref, *b.group, tau)), 1e-6) << trial;
    ASSERT_LT(rel(loss_joint(b, b, 2.0).value, di + 2.0 * gm), 1e-6) << trial;

    // Gallery: the batch targets plus a few extra images, shuffled.
    const int extra = static_cast<int>(rng.below(6));
    Mat<double> gallery(B + extra, d);
    gallery.topRows(B) = b.target;
    gallery.bottomRows(extra) = dt::random_unit_rows(rng, extra, d);
    std::vector<std::int64_t> ids = s.target_ids;
    for (int e = 0; e < extra; ++e) ids.push_back(1 + 3 * e);
    std::vector<int> order(static_cast<std::size_t>(B + extra));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    const Mat<double> shuffled = permute_rows(gallery, order);
    std::vector<std::int64_t> shuffled_ids;
    for (int o : order) shuffled_ids.push_back(ids[static_cast<std::size_t>(o)]);
    const double spn = dt::oracle_spn(b.query, s.target_ids, shuffled, shuffled_ids, tau);
    ASSERT_LT(rel(loss_gm_spn(b.query, s.target_ids, shuffled, shuffled_ids, tau).value, spn), 1e-6) << trial;
    ASSERT_LT(rel(loss_compositor_spn(b.query, s.target_ids, shuffled, shuffled_ids, tau).value, spn), 1e-6) << trial;
  }
}

TEST(LossClosedForm, DegenerateValues) {
  ContrastiveBatch<double> b;
  b.query = unit_row(4, 0);
  b.target = unit_row(4, 0);
  b.ref = unit_row(4, 1);
  b.tau = 0.07;
  EXPECT_EQ(loss_gm(b).value, 0.0);
  EXPECT_EQ(loss_compositor(b).value, 0.0);
  EXPECT_NEAR(loss_di(b).value, std::log1p(std::exp(-1.0 / 0.07)), 1e-9);
  EXPECT_NEAR(loss_di(b).value, 6.2e-7, 0.05e-7);

  b.target = unit_row(4, 2);  // both similarities zero
  EXPECT_NEAR(loss_di(b).value, std::log(2.0), 1e-9);

  ContrastiveBatch<double> two;
  two.query = Mat<double>::Zero(2, 4);
  two.query.col(0).setOnes();
  two.target = Mat<double>::Zero(2, 4);
  two.target.col(1).setOnes();
  EXPECT_NEAR(loss_gm(two).value, std::log(2.0), 1e-12);
}

TEST(LossJoint, GammaDegeneracies) {
  Rng rng(5);
  auto di = random_sample(rng, 6, 8).batch;
  auto gm = random_sample(rng, 6, 8).batch;
  EXPECT_EQ(loss_joint(di, gm, 0.0).value, loss_di(di).value);
  EXPECT_NEAR(loss_joint(di, gm, 1.0).value, loss_di(di).value + loss_gm(gm).value, 1e-9);
  const auto j = loss_joint(di, gm, 2.0);
  EXPECT_NEAR(j.di.value + 2.0 * j.gm.value, j.value, 1e-12);
  EXPECT_LT((j.gm.d_query - 2.0 * loss_gm(gm).d_query).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(loss_joint(di, gm, -1.0), ConfigError);
}

TEST(LossMonotonicity, SupersetDenominators) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int B = 1 + static_cast<int>(rng.below(16));
    const auto b = random_sample(rng, B, trial % 2 == 0 ? 4 : 64).batch;
    const double gm = loss_gm(b).value;
    const double di = loss_di(b).value;
    ASSERT_GE(di, gm) << trial;
    ASSERT_GE(loss_di_sgn(b).value, di) << trial;
  }
}

TEST(LossSgn, VanishingGroupNegativesRecoverDi) {
  Rng rng(8);
  auto b = random_sample(rng, 4, 6, 0.01).batch;
  // Group members pointing away from every query contribute exp(-2/0.01) terms.
  Mat<double> g(4 * kGroupNegatives, 6);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < kGroupNegatives; ++k) g.row(i * kGroupNegatives + k) = -b.query.row(i);
  b.group = g;
  EXPECT_NEAR(loss_di_sgn(b).value, loss_di(b).value, 1e-12);
}

TEST(LossSpn, ReducesToBatchLossesWhenGalleryIsTheTargets) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_sample(rng, 1 + trial % 12, 16);
    const auto& b = s.batch;
    const auto spn = loss_gm_spn(b.query, s.target_ids, b.target, s.target_ids, b.tau);
    const auto base = loss_gm(b);
    EXPECT_NEAR(spn.value, base.value, 1e-9);
    EXPECT_LT((spn.d_query - base.d_query).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((spn.d_gallery - base.d_target).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(loss_compositor_spn(b.query, s.target_ids, b.target, s.target_ids, b.tau).value,
                loss_compositor(b).value, 1e-9);
  }
}

TEST(LossSpn, GrowingGalleryNeverDecreasesLoss) {
  Rng rng(10);
  auto s = random_sample(rng, 5, 8);
  Mat<double> gallery = s.batch.target;
  std::vector<std::int64_t> ids = s.target_ids;
  double prev = loss_gm_spn(s.batch.query, s.target_ids, gallery, ids, s.batch.tau).value;
  for (int k = 0; k < 20; ++k) {
    gallery.conservativeResize(gallery.rows() + 1, Eigen::NoChange);
    gallery.bottomRows(1) = dt::random_unit_rows(rng, 1, 8);
    ids.push_back(k);
    const double cur = loss_compositor_spn(s.batch.query, s.target_ids, gallery, ids, s.batch.tau).value;
    EXPECT_GE(cur, prev);
    prev = cur;
  }
}

TEST(LossPermutation, ConsistentRowPermutationLeavesValues) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int B = 2 + static_cast<int>(rng.below(12));
    auto s = random_sample(rng, B, 8);
    std::vector<int> perm(static_cast<std::size_t>(B));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    ContrastiveBatch<double> p;
    p.query = permute_rows(s.batch.query, perm);
    p.target = permute_rows(s.batch.target, perm);
    p.ref = permute_rows(*s.batch.ref, perm);
    p.group = permute_rows(*s.batch.group, perm, kGroupNegatives);
    p.tau = s.batch.tau;
    std::vector<std::int64_t> pids;
    for (int i : perm) pids.push_back(s.target_ids[static_cast<std::size_t>(i)]);
    EXPECT_NEAR(loss_gm(p).value, loss_gm(s.batch).value, 1e-9);
    EXPECT_NEAR(loss_di(p).value, loss_di(s.batch).value, 1e-9);
    EXPECT_NEAR(loss_di_sgn(p).value, loss_di_sgn(s.batch).value, 1e-9);
    EXPECT_NEAR(loss_joint(p, p, 2.0).value, loss_joint(s.batch, s.batch, 2.0).value, 1e-9);
    EXPECT_NEAR(loss_gm_spn(p.query, pids, p.target, pids, p.tau).value,
                loss_gm_spn(s.batch.query, s.target_ids, s.batch.target, s.target_ids, p.tau).value, 1e-9);
  }
}

TEST(LossTemperature, FiniteAcrossRange) {
  Rng rng(12);
  for (double tau : {1e-3, 3e-3, 0.01, 0.07, 0.5, 1.0, 3.0, 10.0}) {
    auto s = random_sample(rng, 16, 64, tau);
    for (double v : {loss_gm(s.batch).value, loss_di(s.batch).value, loss_di_sgn(s.batch).value,
                     loss_compositor(s.batch).value, loss_joint(s.batch, s.batch, 2.0).value,
                     loss_gm_spn(s.batch.query, s.target_ids, s.batch.target, s.target_ids, tau).value})
      EXPECT_TRUE(std::isfinite(v)) << tau;
    EXPECT_TRUE(loss_di_sgn(s.batch).d_query.allFinite());
  }
}

TEST(LossErrors, BadInputsAreNamed) {
  Rng rng(13);
  auto s = random_sample(rng, 3, 4);
  ContrastiveBatch<double> empty;
  empty.query.resize(0, 4);
  empty.target.resize(0, 4);
  EXPECT_THROW(loss_gm(empty), UsageError);

  auto b = s.batch;
  b.tau = 0.0;
  EXPECT_THROW(loss_gm(b), UsageError);

  b = s.batch;
  b.ref.reset();
  EXPECT_THROW(loss_di(b), UsageError);

  b = s.batch;
  b.group = dt::random_unit_rows(rng, 3 * 4, 4);
  EXPECT_THROW(loss_di_sgn(b), UsageError);
  b.group.reset();
  EXPECT_THROW(loss_di_sgn(b), UsageError);

  b = s.batch;
  b.query(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(loss_gm(b), NumericError);

  b = s.batch;
  b.target = dt::random_unit_rows(rng, 3, 5);
  EXPECT_THROW(loss_gm(b), ShapeError);

  std::vector<std::int64_t> missing = {100, 103, 999};
  EXPECT_THROW(loss_gm_spn(s.batch.query, missing, s.batch.target, s.target_ids, 0.07), UsageError);
  std::vector<std::int64_t> dup = {100, 100, 106};
  EXPECT_THROW(loss_gm_spn(s.batch.query, s.target_ids, s.batch.target, dup, 0.07), UsageError);
}

TEST(LossPrecision, FloatTracksDouble) {
  Rng rng(14);
  auto s = random_sample(rng, 16, 64);
  ContrastiveBatch<float> f;
  f.query = s.batch.query.cast<float>();
  f.target = s.batch.target.cast<float>();
  f.ref = s.batch.ref->cast<float>();
  f.group = s.batch.group->cast<float>();
  EXPECT_NEAR(loss_di_sgn(f).value, loss_di_sgn(s.batch).value, 1e-4);
  EXPECT_NEAR(loss_gm(f).value, loss_gm(s.batch).value, 1e-4);
}
