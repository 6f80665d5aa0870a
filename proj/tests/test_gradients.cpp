#include <gtest/gtest.h>

#include "detailfusion/compositor/compositor.hpp"
#include "detailfusion/encoders/encoders.hpp"
#include "detailfusion/losses/losses.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace dfusion {
namespace {

using testing::check_gradient;
using testing::check_params;
using testing::random_mat;
using testing::random_unit_rows;

constexpr double kTol = 1e-4;

void expect_all_below(const std::vector<testing::GradReport>& reports, double tol = kTol) {
  for (const auto& r : reports) EXPECT_LT(r.rel_error, tol) << r.name << " (|g| = " << r.analytic_norm << ")";
}

TEST(LayerGradients, LinearLayerNormGelu) {
  Rng rng(3);
  Linear<double> lin(5, 4, rng);
  lin.weight.value *= 25.0;
  LayerNorm<double> ln(4);
  ln.gamma.value = random_mat(rng, 1, 4);
  ln.beta.value = random_mat(rng, 1, 4);
  Mat<double> x = random_mat(rng, 6, 5);
  const Mat<double> w = random_mat(rng, 6, 4);
  auto loss = [&] { return (w.array() * gelu(ln.forward(lin.forward(x), nullptr)).array()).sum(); };

  LayerNormCache<double> c;
  const Mat<double> h = lin.forward(x);
  const Mat<double> y = ln.forward(h, &c);
  const Mat<double> dy = gelu_backward(y, w);
  const Mat<double> dx = lin.backward(x, ln.backward(c, dy));

  ParamList<double> ps;
  lin.collect("lin", ps);
  ln.collect("ln", ps);
  expect_all_below(check_params(ps, loss));
  EXPECT_LT(check_gradient("x", x, dx, loss).rel_error, kTol);
}

TEST(LayerGradients, SegmentedAttention) {
  Rng rng(5);
  MultiHeadAttention<double> attn(8, 2, rng);
  for (auto* l : {&attn.q_proj, &attn.k_proj, &attn.v_proj, &attn.out_proj}) l->weight.value *= 20.0;
  const Segments qs = {0, 2, 5};
  const Segments ks = {0, 4, 7};
  Mat<double> xq = random_mat(rng, 5, 8);
  Mat<double> xkv = random_mat(rng, 7, 8);
  const Mat<double> w = random_mat(rng, 5, 8);
  auto loss = [&] { return (w.array() * attn.forward(xq, qs, xkv, ks, nullptr).array()).sum(); };
  AttentionCache<double> c;
  attn.forward(xq, qs, xkv, ks, &c);
  auto [dq, dkv] = attn.backward(c, w);
  ParamList<double> ps;
  attn.collect("attn", ps);
  expect_all_below(check_params(ps, loss));
  EXPECT_LT(check_gradient("xq", xq, dq, loss).rel_error, kTol);
  EXPECT_LT(check_gradient("xkv", xkv, dkv, loss).rel_error, kTol);
}

TEST(LayerGradients, L2Normalize) {
  Rng rng(9);
  Mat<double> x = random_mat(rng, 4, 6);
  const Mat<double> w = random_mat(rng, 4, 6);
  auto loss = [&] { return (w.array() * l2_normalize_rows(x).array()).sum(); };
  Eigen::VectorXd n;
  const Mat<double> y = l2_normalize_rows(x, &n);
  EXPECT_LT(check_gradient("x", x, l2_normalize_rows_backward(y, n, w), loss).rel_error, kTol);
}

// Probe loss on encoder tokens: linear term plus a small quadratic term.
struct Probe {
  Mat<double> w;
  double value(const Mat<double>& t) const { return (w.array() * t.array()).sum() + 0.05 * t.squaredNorm(); }
  Mat<double> grad(const Mat<double>& t) const { return w + 0.1 * t; }
};

class EncoderGradients : public ::testing::TestWithParam<int> {};

TEST_P(EncoderGradients, EveryParameterGroup) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  const ModelConfig cfg = testing::tiny_config();
  DualEncoder<double> enc(cfg, seed);
  // Unit-scale embeddings keep the residual stream away from the layer-norm
  // singularity, where a 1e-3 step stops being small.
  ParamList<double> all;
  enc.collect(all);
  Rng rng(seed * 31 + 1);
  for (auto& p : all) {
    const auto& n = p.name;
    if (n.ends_with("query_tokens") || n.ends_with("token_embed") || n.ends_with("text_pos"))
      p.param->value = random_mat(rng, p.param->value.rows(), p.param->value.cols());
  }

  const int B = 2;
  std::vector<Image> imgs;
  for (int b = 0; b < B; ++b) imgs.push_back(testing::random_image(rng, cfg.image_size));
  std::vector<const Image*> ptrs = {&imgs[0], &imgs[1]};
  std::vector<std::vector<int>> texts = {testing::random_tokens(rng, cfg.vocab_size, 6), {3, 7, 1}};
  const Probe probe{random_mat(rng, B * cfg.num_tokens(), cfg.feature_dim)};

  for (int path = 0; path < 3; ++path) {  // DI query, GM query, image-only
    auto forward = [&](EncodeTape<double>* et, VisionTape<double>* vt) {
      const Mat<double> v = enc.vision_encode(ptrs, vt);
      if (path == 2) return enc.encode_images(v, B, et);
      return enc.encode_queries(path == 0 ? Branch::kDI : Branch::kGM, v, texts, et);
    };
    for (auto& p : all) p.param->zero_grad();
    EncodeTape<double> et;
    VisionTape<double> vt;
    const Mat<double> tokens = forward(&et, &vt);
    const Mat<double> dv = enc.backward(et, probe.grad(tokens));
    enc.vision.backward(vt, dv);

    ParamList<double> groups;
    enc.vision.collect("vision", groups);
    if (path == 1) {
      enc.gm_encoder.collect("gm_encoder", groups);
      enc.gm_linear_h.collect("gm_linear_h", groups);
    } else {
      enc.di_encoder.collect("di_encoder", groups);
      (path == 0 ? enc.di_linear_h : enc.di_linear_i).collect("di_linear", groups);
    }
    auto loss = [&] { return probe.value(forward(nullptr, nullptr)); };
    SCOPED_TRACE("path " + std::to_string(path));
    expect_all_below(check_params(groups, loss, 1e-3, 12));

    // Parameters outside the active path receive no gradient.
    ParamList<double> idle;
    if (path == 1) enc.di_encoder.collect("di_encoder", idle);
    else enc.gm_encoder.collect("gm_encoder", idle);
    for (auto& p : idle) EXPECT_EQ(p.param->grad.squaredNorm(), 0.0) << p.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, EncoderGradients, ::testing::Values(1, 2, 3, 4, 5));

class CompositorGradients : public ::testing::TestWithParam<std::tuple<int, ExtractionMode, FusionMode>> {};

TEST_P(CompositorGradients, EveryParameterAndInput) {
  const auto [seed, extraction, fusion] = GetParam();
  ModelConfig cfg = testing::tiny_config();
  cfg.extraction = extraction;
  cfg.fusion = fusion;
  Compositor<double> comp(cfg, static_cast<std::uint64_t>(seed));
  Rng rng(static_cast<std::uint64_t>(seed) + 100);
  // Zero-initialised output projections would hide the attention gradients.
  ParamList<double> ps;
  comp.collect(ps);
  for (auto& p : ps) p.param->value = random_mat(rng, p.param->value.rows(), p.param->value.cols(), 0.3);

  const int B = 3;
  Mat<double> gt = random_mat(rng, B * cfg.num_tokens(), cfg.feature_dim);
  Mat<double> dt = random_mat(rng, B * cfg.num_tokens(), cfg.feature_dim);
  const Mat<double> w = random_mat(rng, B, cfg.feature_dim);
  auto loss = [&] { return (w.array() * l2_normalize_rows(comp.forward(gt, dt, B).fused).array()).sum(); };

  for (auto& p : ps) p.param->zero_grad();
  ComposeTape<double> tape;
  const Mat<double> raw = comp.forward(gt, dt, B, &tape).fused;
  Eigen::VectorXd n;
  const Mat<double> y = l2_normalize_rows(raw, &n);
  auto [dg, dd] = comp.backward(tape, l2_normalize_rows_backward(y, n, w));
  expect_all_below(check_params(ps, loss, 1e-4));
  EXPECT_LT(check_gradient("global_tokens", gt, dg, loss, 1e-4).rel_error, kTol);
  EXPECT_LT(check_gradient("detail_tokens", dt, dd, loss, 1e-4).rel_error, kTol);
}

INSTANTIATE_TEST_SUITE_P(
    Modes, CompositorGradients,
    ::testing::Combine(::testing::Values(1, 2, 3, 4, 5),
                       ::testing::Values(ExtractionMode::kAttention, ExtractionMode::kProjection, ExtractionMode::kConcat),
                       ::testing::Values(FusionMode::kPhiPsi, FusionMode::kPhiOnly, FusionMode::kPsiOnly,
                                         FusionMode::kAverage)));

class LossGradients : public ::testing::TestWithParam<int> {};

TEST_P(LossGradients, AllFeatureInputs) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  const int B = rng.range(1, 6);
  const int d = 5;
  ContrastiveBatch<double> b;
  b.query = random_unit_rows(rng, B, d);
  b.target = random_unit_rows(rng, B, d);
  b.ref = random_unit_rows(rng, B, d);
  b.group = random_unit_rows(rng, B * 5, d);
  b.tau = 0.2;

  using Fn = LossResult<double> (*)(const ContrastiveBatch<double>&);
  for (Fn fn : {&loss_gm<double>, &loss_di<double>, &loss_di_sgn<double>, &loss_compositor<double>}) {
    const LossResult<double> r = fn(b);
    auto loss = [&] { return fn(b).value; };
    EXPECT_LT(check_gradient("query", b.query, r.d_query, loss).rel_error, kTol);
    EXPECT_LT(check_gradient("target", b.target, r.d_target, loss).rel_error, kTol);
    if (r.d_ref.size()) EXPECT_LT(check_gradient("ref", *b.ref, r.d_ref, loss).rel_error, kTol);
    if (r.d_group.size()) EXPECT_LT(check_gradient("group", *b.group, r.d_group, loss).rel_error, kTol);
  }

  // Joint loss: gradients of both sub-batches.
  ContrastiveBatch<double> gm = b;
  gm.query = random_unit_rows(rng, B, d);
  const double gamma = 2.0;
  const JointLossResult<double> j = loss_joint(b, gm, gamma);
  auto joint = [&] { return loss_joint(b, gm, gamma).value; };
  EXPECT_LT(check_gradient("di.query", b.query, j.di.d_query, joint).rel_error, kTol);
  EXPECT_LT(check_gradient("gm.query", gm.query, j.gm.d_query, joint).rel_error, kTol);

  // Full-gallery variants.
  const int G = B + 4;
  Mat<double> gallery = random_unit_rows(rng, G, d);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(G));
  for (int i = 0; i < G; ++i) ids[static_cast<std::size_t>(i)] = 100 + 3 * i;
  std::vector<std::int64_t> targets;
  for (int i = 0; i < B; ++i) targets.push_back(ids[static_cast<std::size_t>(rng.range(0, G - 1))]);
  for (auto fn : {&loss_gm_spn<double>, &loss_compositor_spn<double>}) {
    const LossResult<double> r = fn(b.query, targets, gallery, ids, 0.2);
    auto loss = [&] { return fn(b.query, targets, gallery, ids, 0.2).value; };
    EXPECT_LT(check_gradient("query", b.query, r.d_query, loss).rel_error, kTol);
    EXPECT_LT(check_gradient("gallery", gallery, r.d_gallery, loss).rel_error, kTol);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradients, ::testing::Range(1, 11));

}  // namespace
}  // namespace dfusion
