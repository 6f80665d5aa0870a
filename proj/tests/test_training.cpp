#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/dataset.hpp"
#include "detailfusion/losses/losses.hpp"
#include "detailfusion/training/checkpoint.hpp"
#include "detailfusion/training/optimizer.hpp"
#include "detailfusion/training/train_config.hpp"
#include "detailfusion/training/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace dfusion;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig m = dfusion::testing::tiny_config();
  m.vision_blocks = 0;
  m.max_text_len = 32;
  return m;
}

GenerationConfig small_gen() {
  GenerationConfig g;
  g.resolution = 16;
  return g;
}

const TripletDataset& edit_data() {
  static const TripletDataset ds = generate_edit_pretrain_set(21, 80, small_gen());
  return ds;
}

const TripletDataset& cir_data() {
  static const TripletDataset ds = generate_cir_finetune_set(22, 36, small_gen());
  return ds;
}

TrainConfig config(int stage, int epochs = 2, int batch = 16) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = epochs;
  c.batch_size = batch;
  c.model = small_model();
  c.seed = 5;
  return c;
}

using Digests = std::array<std::string, kNumParamGroups>;

Digests digests(const Model& m) {
  Digests d;
  for (auto g : kAllParamGroups) d[static_cast<std::size_t>(g)] = m.group_digest(g);
  return d;
}

void expect_changed_exactly(const Digests& before, const Digests& after, std::initializer_list<ParamGroup> changed) {
  for (auto g : kAllParamGroups) {
    const bool should = std::find(changed.begin(), changed.end(), g) != changed.end();
    const auto i = static_cast<std::size_t>(g);
    if (should) EXPECT_NE(before[i], after[i]) << to_string(g) << " should have been trained";
    else EXPECT_EQ(before[i], after[i]) << to_string(g) << " should be untouched";
  }
}

const StageOutput& stage1_out() {
  static const StageOutput out = run_stage1(config(1, 3), edit_data());
  return out;
}

const StageOutput& stage2_out() {
  static const StageOutput out = run_stage2(config(2, 3, 12), cir_data(), &stage1_out().checkpoint);
  return out;
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST(TrainConfig, MinimalStage1ParsesAndRoundTrips) {
  const TrainConfig c = parse_train_config("stage = 1\ndataset = data/pre\n# comment\n\nlr = 0.0005\n");
  EXPECT_EQ(c.stage, 1);
  EXPECT_EQ(c.dataset, "data/pre");
  EXPECT_DOUBLE_EQ(c.lr, 0.0005);
  EXPECT_DOUBLE_EQ(c.tau, 0.07);
  EXPECT_DOUBLE_EQ(c.gamma, 2.0);
  EXPECT_EQ(c.epochs, default_schedule(1).epochs);
  EXPECT_EQ(c.batch_size, default_schedule(1).batch_size);
  EXPECT_EQ(parse_train_config(c.to_text()), c);
  EXPECT_EQ(parse_train_config(c.to_text()).to_text(), c.to_text());
  EXPECT_EQ(parse_train_config(c.to_text()).digest(), c.digest());
}

TEST(TrainConfig, StageSchedules) {
  EXPECT_EQ(parse_train_config("stage = 2").epochs, 30);
  EXPECT_EQ(parse_train_config("stage = 2").batch_size, 32);
  EXPECT_EQ(parse_train_config("stage = 3").epochs, 60);
  EXPECT_EQ(parse_train_config("stage = 3").batch_size, 128);
  EXPECT_EQ(parse_train_config("stage = 3\nepochs = 4").epochs, 4);
}

TEST(TrainConfig, NamedErrors) {
  auto message = [](const std::string& text) {
    try {
      parse_train_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("stage = 2\ngamma = -1").find("trade-off must be positive"), std::string::npos);
  EXPECT_NE(message("stage = 1\nlearning_rate = 1").find("learning_rate"), std::string::npos);
  EXPECT_NE(message("stage = 1\nlr = fast").find("lr"), std::string::npos);
  EXPECT_NE(message("stage = 1\nepochs = 2\nepochs = 3").find("epochs"), std::string::npos);
  EXPECT_NE(message("stage = 1\nepochs = 0").find("epochs"), std::string::npos);
  EXPECT_NE(message("stage = 4").find("stage"), std::string::npos);
  EXPECT_NE(message("stage = 1\ntau = 0").find("tau"), std::string::npos);
  EXPECT_NE(message("stage = 3\nfreeze_branches = false").find("branches"), std::string::npos);
  EXPECT_NE(message("stage = 1\nsgn = maybe").find("sgn"), std::string::npos);
  EXPECT_NE(message("stage = 1\nno equals sign").find("expected key = value"), std::string::npos);
  EXPECT_THROW(load_train_config("/nonexistent/cfg.txt"), IoError);
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  Model m(small_model(), 3);
  const auto before = digests(m);
  AdamWOptions o;
  o.lr = 0.0;
  AdamW opt(m.params(), o);
  Rng rng(1);
  for (int s = 0; s < 10; ++s) {
    for (auto& p : m.params()) p.param->grad = dfusion::testing::random_mat(rng, p.param->value.rows(), p.param->value.cols()).cast<float>();
    opt.step();
  }
  EXPECT_EQ(opt.steps(), 10);
  EXPECT_EQ(digests(m), before);
}

TEST(Optimizer, FirstStepAndDecoupledDecay) {
  Param<float> w;
  w.value = Mat<float>::Constant(2, 2, 1.0f);
  w.grad = Mat<float>::Constant(2, 2, 0.5f);
  Param<float> b;
  b.value = Mat<float>::Constant(1, 2, 1.0f);
  b.grad = Mat<float>::Zero(1, 2);
  AdamWOptions o;
  o.lr = 0.1;
  AdamW opt({{"w", &w}, {"b", &b}}, o);
  opt.step();
  // Bias-corrected Adam moves each coordinate by lr; decay shrinks matrices only.
  const float expect = 1.0f - 0.1f * 0.05f - 0.1f * 0.5f / (0.5f + 1e-8f);
  EXPECT_NEAR(w.value(0, 0), expect, 1e-6f);
  EXPECT_EQ(b.value(0, 0), 1.0f);
  w.grad(0, 0) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(opt.step(), NumericError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const Checkpoint& c = stage2_out().checkpoint;
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.meta, c.meta);
  EXPECT_EQ(back.model.config, c.model.config);
  EXPECT_EQ(digests(back.model), digests(c.model));
  EXPECT_EQ(back.model.frozen, c.model.frozen);

  const fs::path p = fs::temp_directory_path() / "dfusion_test_ckpt.bin";
  save_checkpoint(c, p);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(p)), bytes);
  fs::remove(p);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const std::string bytes = serialize_checkpoint(Checkpoint{Model(small_model(), 1), {}});
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), IoError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), IoError);
  bad = bytes;
  bad[8] = 9;  // version
  EXPECT_THROW(deserialize_checkpoint(bad), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(Stage1, TrainsDiBranchOnlyAndLearns) {
  const Model fresh(small_model(), 5);
  const auto& out = stage1_out();
  expect_changed_exactly(digests(fresh), digests(out.checkpoint.model),
                         {ParamGroup::kDiEncoder, ParamGroup::kDiLinearH, ParamGroup::kDiLinearI});
  EXPECT_EQ(out.checkpoint.meta.stage, 1);
  EXPECT_EQ(out.val_recall_at_1.size(), 3u);
  EXPECT_GE(out.best_epoch, 0);
  const auto loss = out.trace.column("loss_di");
  const std::size_t tenth = std::max<std::size_t>(1, loss.size() / 10);
  EXPECT_LT(mean(loss, loss.size() - tenth, loss.size()), mean(loss, 0, tenth));
}

TEST(Stage1, RerunIsBitIdentical) {
  const auto again = run_stage1(config(1, 3), edit_data());
  EXPECT_EQ(serialize_checkpoint(again.checkpoint), serialize_checkpoint(stage1_out().checkpoint));
  EXPECT_EQ(again.trace.to_csv(), stage1_out().trace.to_csv());
}

TEST(Stage1, WrongDatasetKindIsAConfigError) {
  EXPECT_THROW(run_stage1(config(1), cir_data()), ConfigError);
  EXPECT_THROW(run_stage1(config(2), edit_data()), ConfigError);
}

TEST(Stage2, TrainsBothBranchesOnly) {
  expect_changed_exactly(digests(stage1_out().checkpoint.model), digests(stage2_out().checkpoint.model),
                         {ParamGroup::kDiEncoder, ParamGroup::kDiLinearH, ParamGroup::kDiLinearI,
                          ParamGroup::kGmEncoder, ParamGroup::kGmLinearH});
  const auto& t = stage2_out().trace;
  const auto total = t.column("loss");
  const auto di = t.column("loss_di");
  const auto gm = t.column("loss_gm");
  for (std::size_t i = 0; i < total.size(); ++i) EXPECT_NEAR(total[i], di[i] + 2.0 * gm[i], 1e-9);
  EXPECT_EQ(stage2_out().checkpoint.meta.history.size(), 2u);
}

TEST(Stage2, SgnLossDominatesBaseOnEverySnapshot) {
  TrainConfig c = config(2, 1, 12);
  c.sgn = true;
  const auto out = run_stage2(c, cir_data(), &stage1_out().checkpoint);
  const auto sgn = out.trace.column("loss_di");
  const auto base = out.trace.column("loss_di_base");
  ASSERT_FALSE(sgn.empty());
  for (std::size_t i = 0; i < sgn.size(); ++i) EXPECT_GE(sgn[i], base[i]);
}

TEST(Stage2, SgnNeedsGroups) {
  TripletDataset ds = cir_data();
  ds.groups.clear();
  for (auto& t : ds.triplets) t.subset_group.reset();
  TrainConfig c = config(2, 1);
  c.sgn = true;
  EXPECT_THROW(run_stage2(c, ds, nullptr), ConfigError);
}

TEST(Stage3, OnlyCompositorChangesAndCacheMatchesOnTheFly) {
  TrainConfig c = config(3, 2, 12);
  const auto cached = run_stage3(c, cir_data(), stage2_out().checkpoint);
  c.cache_features = false;
  const auto live = run_stage3(c, cir_data(), stage2_out().checkpoint);

  const auto before = digests(stage2_out().checkpoint.model);
  expect_changed_exactly(before, digests(cached.checkpoint.model), {ParamGroup::kCompositor});
  const auto a = cached.trace.column("loss_compositor");
  const auto b = live.trace.column("loss_compositor");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5) << "step " << i;
  for (double l : cached.trace.column("mean_lambda")) {
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
  }
}

TEST(Stage3, RejectsUnfreezing) {
  TrainConfig c = config(3, 1);
  c.vision_trainable = true;
  EXPECT_THROW(run_stage3(c, cir_data(), stage2_out().checkpoint), ConfigError);
  c = config(3, 1);
  c.freeze_branches = false;
  EXPECT_THROW(run_stage3(c, cir_data(), stage2_out().checkpoint), ConfigError);
}

TEST(SpnPhase, GmPhaseTouchesGmBranchOnly) {
  TrainConfig c = config(2, 1, 12);
  c.spn_target = SpnTarget::kGm;
  const auto out = run_spn_phase(c, cir_data(), stage2_out().checkpoint);
  expect_changed_exactly(digests(stage2_out().checkpoint.model), digests(out.checkpoint.model),
                         {ParamGroup::kGmEncoder, ParamGroup::kGmLinearH});
}

TEST(SpnPhase, CompositorPhaseTouchesCompositorOnly) {
  const auto s3 = run_stage3(config(3, 1, 12), cir_data(), stage2_out().checkpoint);
  TrainConfig c = config(3, 2, 12);
  c.spn_target = SpnTarget::kCompositor;
  const auto out = run_spn_phase(c, cir_data(), s3.checkpoint);
  expect_changed_exactly(digests(s3.checkpoint.model), digests(out.checkpoint.model), {ParamGroup::kCompositor});
  for (double v : out.trace.column("loss")) EXPECT_TRUE(std::isfinite(v));
}

// Per-step losses are too noisy for a monotone moving average; the
// epoch means of a full-gallery phase still have to come down.
TEST(SpnPhase, EpochMeanLossDecreases) {
  const auto s3 = run_stage3(config(3, 1, 12), cir_data(), stage2_out().checkpoint);
  TrainConfig c = config(3, 8, 12);
  c.spn_target = SpnTarget::kCompositor;
  const auto out = run_spn_phase(c, cir_data(), s3.checkpoint);
  const auto loss = out.trace.column("loss");
  const auto epoch = out.trace.column("epoch");
  double first = 0, last = 0;
  int nf = 0, nl = 0;
  for (std::size_t i = 0; i < loss.size(); ++i) {
    if (epoch[i] == 0) first += loss[i], ++nf;
    if (epoch[i] == 7) last += loss[i], ++nl;
  }
  ASSERT_GT(nf, 0);
  ASSERT_GT(nl, 0);
  EXPECT_LT(last / nl, first / nf);
}

TEST(SpnPhase, NeedsTarget) {
  EXPECT_THROW(run_spn_phase(config(2, 1), cir_data(), stage2_out().checkpoint), ConfigError);
}

TEST(LossTrace, CsvLayout) {
  const auto csv = stage1_out().trace.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,epoch,loss_di");
  EXPECT_THROW(stage1_out().trace.column("nope"), UsageError);
}
