#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "detailfusion/common/digest.hpp"
#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/dataset.hpp"
#include "detailfusion/data/dataset_io.hpp"
#include "detailfusion/data/scene.hpp"

using namespace dfusion;
namespace fs = std::filesystem;

namespace {

std::string image_digest(const Image& img) {
  std::string bytes;
  append_f32_le(bytes, img.pixels.data(), img.pixels.size());
  return sha256_hex(bytes);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dfusion_test_data_" + name);
  fs::remove_all(p);
  return p;
}

// Edit semantics written out directly on the object list, independent of apply_edit.
SceneDescription reapply(SceneDescription s, const AtomicEdit& e) {
  auto at = [&](Cell c) {
    return std::find_if(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) { return o.cell == c; });
  };
  switch (e.verb) {
    case EditVerb::kAdd: s.objects.push_back({e.shape, e.color, e.cell}); break;
    case EditVerb::kRemove: s.objects.erase(at(e.cell)); break;
    case EditVerb::kRecolor: at(e.cell)->color = e.color; break;
    case EditVerb::kMove: at(e.cell)->cell = e.to; break;
  }
  std::sort(s.objects.begin(), s.objects.end(), [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
  return s;
}

SceneDescription one_square() {
  SceneDescription s;
  s.grid_size = 4;
  s.background = Color::kBlack;
  s.objects = {{Shape::kSquare, Color::kRed, {1, 1}}};
  return s;
}

}  // namespace

TEST(Scene, EmptySceneIsUniformBackground) {
  SceneDescription s;
  s.background = Color::kCyan;
  const Image img = render_scene(s, 16);
  ASSERT_EQ(img.pixels.size(), 16u * 16 * 3);
  const auto bg = rgb(Color::kCyan);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(img.at(y, x, c), bg[c]);
}

TEST(Scene, RenderIsDeterministicAndPinned) {
  const Image a = render_scene(one_square(), 32);
  const Image b = render_scene(one_square(), 32);
  EXPECT_EQ(a, b);
  EXPECT_EQ(image_digest(a), "aafd0fe4663f4d448ea6d8588f3d2bb262c90945c4f4b4eaf1f4db9cbffb93e4");
}

TEST(Scene, ObjectStaysInItsCell) {
  const Image img = render_scene(one_square(), 32);
  const auto bg = rgb(Color::kBlack);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool inside = y >= 8 && y < 16 && x >= 8 && x < 16;
      if (inside) continue;
      for (int c = 0; c < 3; ++c) ASSERT_EQ(img.at(y, x, c), bg[c]) << y << "," << x;
    }
  for (float v : img.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Scene, InvalidScenesNameTheInvariant) {
  SceneDescription s = one_square();
  s.objects.push_back({Shape::kCircle, Color::kBlue, {1, 1}});
  EXPECT_THROW(render_scene(s, 32), ValidationError);
  s = one_square();
  s.objects[0].cell = {4, 0};
  EXPECT_THROW(render_scene(s, 32), ValidationError);
  EXPECT_THROW(render_scene(one_square(), 30), ValidationError);
  try {
    s = one_square();
    s.objects.push_back({Shape::kCircle, Color::kBlue, {1, 1}});
    validate_scene(s);
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("cell"), std::string::npos) << e.what();
  }
}

TEST(Edit, AddThenRemoveRestores) {
  const SceneDescription s = one_square();
  const auto added = apply_edit(s, AtomicEdit::add(Shape::kTriangle, Color::kGreen, {2, 3}));
  EXPECT_EQ(added.objects.size(), 2u);
  EXPECT_EQ(apply_edit(added, AtomicEdit::remove(Shape::kTriangle, {2, 3})), s);
}

TEST(Edit, RecolorChangesOnlyThatField) {
  SceneDescription s;
  s.objects = {{Shape::kCircle, Color::kRed, {0, 0}}};
  const auto r = apply_edit(s, AtomicEdit::recolor(Shape::kCircle, {0, 0}, Color::kBlue));
  ASSERT_EQ(r.objects.size(), 1u);
  EXPECT_EQ(r.objects[0].color, Color::kBlue);
  EXPECT_EQ(r.objects[0].shape, Shape::kCircle);
  EXPECT_EQ(r.objects[0].cell, (Cell{0, 0}));
  EXPECT_EQ(r.background, s.background);
}

TEST(Edit, MoveLeavesOthersUntouched) {
  SceneDescription s = one_square();
  s.objects.push_back({Shape::kCircle, Color::kYellow, {3, 3}});
  s.canonicalize();
  const auto m = apply_edit(s, AtomicEdit::move(Shape::kSquare, {1, 1}, {0, 2}));
  EXPECT_EQ(m, reapply(s, AtomicEdit::move(Shape::kSquare, {1, 1}, {0, 2})));
  EXPECT_NE(m.find({3, 3}), nullptr);
  EXPECT_EQ(m.find({1, 1}), nullptr);
}

TEST(Edit, AbsentOperandsThrow) {
  const SceneDescription s = one_square();
  EXPECT_THROW(apply_edit(s, AtomicEdit::remove(Shape::kSquare, {0, 0})), EditError);
  EXPECT_THROW(apply_edit(s, AtomicEdit::remove(Shape::kCircle, {1, 1})), EditError);
  EXPECT_THROW(apply_edit(s, AtomicEdit::recolor(Shape::kSquare, {2, 2}, Color::kBlue)), EditError);
  EXPECT_THROW(apply_edit(s, AtomicEdit::move(Shape::kSquare, {1, 1}, {9, 9})), EditError);
  EXPECT_THROW(apply_edit(s, AtomicEdit::add(Shape::kCircle, Color::kBlue, {1, 1})), EditError);
}

TEST(Edit, PhraseIsTemplated) {
  const auto words = edit_phrase(AtomicEdit::recolor(Shape::kSquare, {1, 1}, Color::kBlue));
  EXPECT_EQ(words, (std::vector<std::string>{"recolor", "square", "r1", "c1", "blue"}));
}

TEST(Vocabulary, StandardFitsBudgetAndRoundTrips) {
  const Vocabulary v = Vocabulary::standard();
  EXPECT_LE(v.size(), kMaxVocabulary);
  const std::vector<std::string> words = {"move", "circle", "r0", "c3", "to", "r2", "c2"};
  EXPECT_EQ(v.decode(v.encode(words)), "move circle r0 c3 to r2 c2");
  EXPECT_THROW(v.id("banana"), ValidationError);
}

TEST(EditPretrain, MinimalSet) {
  const auto ds = generate_edit_pretrain_set(7, 1);
  EXPECT_EQ(ds.triplets.size(), 1u);
  EXPECT_EQ(ds.gallery.size(), 2u);
  EXPECT_EQ(ds.kind, DatasetKind::kEditPretrain);
  EXPECT_THROW(generate_edit_pretrain_set(7, 0), ConfigError);
  EXPECT_THROW(generate_cir_finetune_set(7, 0), ConfigError);
}

TEST(EditPretrain, EveryTripletIsOneEditAndReproducesTarget) {
  const auto ds = generate_edit_pretrain_set(7, 400);
  ds.validate();
  for (const auto& t : ds.triplets) {
    ASSERT_EQ(t.edits.size(), 1u);
    const auto& ref = ds.image(t.reference_id);
    const auto& tgt = ds.image(t.target_id);
    const auto scene = reapply(ref.scene, t.edits[0]);
    ASSERT_EQ(scene, tgt.scene);
    ASSERT_EQ(render_scene(scene, ds.config.resolution).pixels, tgt.image.pixels);
    ASSERT_NE(ref.image.pixels, tgt.image.pixels);
    for (int tok : t.tokens) ASSERT_LT(tok, ds.vocabulary.size());
    EXPECT_EQ(ds.vocabulary.decode(t.tokens), ds.vocabulary.decode(ds.vocabulary.encode(edits_phrase(t.edits))));
  }
}

TEST(EditPretrain, PairsAreCloserThanRandomPairs) {
  const auto ds = generate_edit_pretrain_set(7, 1000);
  double pair = 0.0;
  for (const auto& t : ds.triplets) pair += mean_l1_distance(ds.image(t.reference_id).image, ds.image(t.target_id).image);
  pair /= static_cast<double>(ds.triplets.size());
  double random = 0.0;
  const auto n = ds.gallery.size();
  const int samples = 2000;
  for (int i = 0; i < samples; ++i) {
    const auto a = (static_cast<std::size_t>(i) * 7919) % n;
    const auto b = (static_cast<std::size_t>(i) * 104729 + 13) % n;
    random += mean_l1_distance(ds.gallery[a].image, ds.gallery[b].image);
  }
  random /= samples;
  EXPECT_LT(pair, random);
}

TEST(CirFinetune, GroupsAreSixDistinctSimilarImages) {
  const auto ds = generate_cir_finetune_set(7, 500);
  ds.validate();
  ASSERT_FALSE(ds.groups.empty());
  int similar = 0;
  for (const auto& [gid, members] : ds.groups) {
    ASSERT_EQ(members.size(), static_cast<std::size_t>(kSubsetGroupSize));
    std::set<std::vector<float>> distinct;
    for (int id : members) distinct.insert(ds.image(id).image.pixels);
    EXPECT_EQ(distinct.size(), members.size());
    const auto& first = ds.image(members[0]).scene;
    const bool same = std::all_of(members.begin(), members.end(), [&](int id) {
      const auto& s = ds.image(id).scene;
      return s.background == first.background && s.objects.size() == first.objects.size();
    });
    similar += same ? 1 : 0;
  }
  EXPECT_GE(similar, static_cast<int>(0.9 * static_cast<double>(ds.groups.size())));
  for (const auto& t : ds.triplets) {
    ASSERT_TRUE(t.subset_group.has_value());
    const auto& m = ds.groups.at(*t.subset_group);
    EXPECT_NE(std::find(m.begin(), m.end(), t.target_id), m.end());
    EXPECT_EQ(std::find(m.begin(), m.end(), t.reference_id), m.end());
    EXPECT_GE(t.edits.size(), 1u);
    EXPECT_LE(t.edits.size(), 3u);
    SceneDescription scene = ds.image(t.reference_id).scene;
    for (const auto& e : t.edits) scene = reapply(scene, e);
    EXPECT_EQ(scene, ds.image(t.target_id).scene);
  }
}

TEST(CirFinetune, DistractorsPadGalleryToExactSize) {
  GenerationConfig cfg;
  cfg.gallery_size = 200;
  const auto ds = generate_cir_finetune_set(11, 60, cfg);
  EXPECT_EQ(ds.gallery.size(), 200u);
  std::set<std::string> keys;
  for (const auto& g : ds.gallery) keys.insert(g.scene.key());
  EXPECT_EQ(keys.size(), ds.gallery.size());
  cfg.gallery_size = 10;
  EXPECT_THROW(generate_cir_finetune_set(11, 60, cfg), ConfigError);
}

TEST(GenerationConfig, RejectsBadValues) {
  GenerationConfig cfg;
  cfg.resolution = 30;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_objects = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.triplets_per_group = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

class Serialization : public ::testing::TestWithParam<DatasetKind> {};

TEST_P(Serialization, DeterministicAndByteIdenticalRoundTrip) {
  auto make = [&] {
    return GetParam() == DatasetKind::kEditPretrain ? generate_edit_pretrain_set(7, 120) : generate_cir_finetune_set(7, 60);
  };
  const auto a = scratch("a" + to_string(GetParam()));
  const auto b = scratch("b" + to_string(GetParam()));
  const auto c = scratch("c" + to_string(GetParam()));
  save_dataset(make(), a);
  save_dataset(make(), b);
  const auto loaded = load_dataset(a, true);
  save_dataset(loaded, c);
  for (const char* f : {kManifestFile, kGalleryBinFile, kGalleryIdxFile}) {
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
    EXPECT_EQ(read_file(a / f), read_file(c / f)) << f;
  }
  EXPECT_EQ(loaded.triplets.size(), make().triplets.size());
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

INSTANTIATE_TEST_SUITE_P(Kinds, Serialization, ::testing::Values(DatasetKind::kEditPretrain, DatasetKind::kCirFinetune),
                         [](const auto& info) { return to_string(info.param); });

TEST(Serialization, CorruptGalleryIsRejected) {
  const auto dir = scratch("corrupt");
  save_dataset(generate_edit_pretrain_set(3, 5), dir);
  {
    std::fstream f(dir / kGalleryBinFile, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    const float bad = 0.123f;
    f.write(reinterpret_cast<const char*>(&bad), sizeof bad);
  }
  EXPECT_NO_THROW(load_dataset(dir, false));
  EXPECT_THROW(load_dataset(dir, true), ValidationError);
  fs::resize_file(dir / kGalleryBinFile, 64);
  EXPECT_THROW(load_dataset(dir, false), Error);
  fs::remove_all(dir);
  EXPECT_THROW(load_dataset(dir, false), IoError);
}
