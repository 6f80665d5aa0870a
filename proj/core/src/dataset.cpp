#include "detailfusion/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "detailfusion/common/errors.hpp"
#include "detailfusion/common/rng.hpp"

namespace dfusion {
namespace {

std::vector<Cell> all_cells(int grid) {
  std::vector<Cell> cells;
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) cells.push_back({r, c});
  return cells;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

Color random_color_except(Rng& rng, std::initializer_list<Color> excluded) {
  std::vector<Color> options;
  for (int c = 0; c < kNumColors; ++c) {
    auto col = static_cast<Color>(c);
    if (std::find(excluded.begin(), excluded.end(), col) == excluded.end()) options.push_back(col);
  }
  return pick(rng, options);
}

SceneDescription random_scene(Rng& rng, const GenerationConfig& cfg) {
  SceneDescription s;
  s.grid_size = cfg.grid_size;
  s.background = static_cast<Color>(rng.below(kNumColors));
  const int n = rng.range(cfg.min_objects, cfg.max_objects);
  auto cells = all_cells(cfg.grid_size);
  rng.shuffle(cells.begin(), cells.end());
  for (int i = 0; i < n; ++i) {
    s.objects.push_back({static_cast<Shape>(rng.below(kNumShapes)), random_color_except(rng, {s.background}),
                         cells[static_cast<std::size_t>(i)]});
  }
  s.canonicalize();
  return s;
}

std::vector<Cell> free_cells(const SceneDescription& s, const std::set<Cell>& excluded) {
  std::vector<Cell> out;
  for (const auto& c : all_cells(s.grid_size))
    if (!s.occupied(c) && !excluded.contains(c)) out.push_back(c);
  return out;
}

std::vector<const SceneObject*> editable_objects(const SceneDescription& s, const std::set<Cell>& touched) {
  std::vector<const SceneObject*> out;
  for (const auto& o : s.objects)
    if (!touched.contains(o.cell)) out.push_back(&o);
  return out;
}

// Draws one valid edit of the requested verb, avoiding cells already touched
// by earlier edits of the same chain. Returns nullopt when infeasible.
std::optional<AtomicEdit> random_edit(Rng& rng, const SceneDescription& s, EditVerb verb,
                                      const std::set<Cell>& touched) {
  switch (verb) {
    case EditVerb::kAdd: {
      auto cells = free_cells(s, touched);
      if (cells.empty()) return std::nullopt;
      const auto shape = static_cast<Shape>(rng.below(kNumShapes));
      const auto color = random_color_except(rng, {s.background});
      return AtomicEdit::add(shape, color, pick(rng, cells));
    }
    case EditVerb::kRemove: {
      auto objs = editable_objects(s, touched);
      if (objs.size() < 2) return std::nullopt;  // keep at least one object
      const auto* o = pick(rng, objs);
      return AtomicEdit::remove(o->shape, o->cell);
    }
    case EditVerb::kRecolor: {
      auto objs = editable_objects(s, touched);
      if (objs.empty()) return std::nullopt;
      const auto* o = pick(rng, objs);
      return AtomicEdit::recolor(o->shape, o->cell, random_color_except(rng, {s.background, o->color}));
    }
    case EditVerb::kMove: {
      auto objs = editable_objects(s, touched);
      auto cells = free_cells(s, touched);
      if (objs.empty() || cells.empty()) return std::nullopt;
      const auto* o = pick(rng, objs);
      return AtomicEdit::move(o->shape, o->cell, pick(rng, cells));
    }
  }
  return std::nullopt;
}

void mark_touched(const AtomicEdit& e, std::set<Cell>& touched) {
  touched.insert(e.cell);
  if (e.verb == EditVerb::kMove) touched.insert(e.to);
}

// Builds the de-duplicated gallery as scenes are registered in order.
class GalleryBuilder {
 public:
  GalleryBuilder(int resolution) : resolution_(resolution) {}
  int add(const SceneDescription& scene) {
    auto key = scene.key();
    auto it = ids_.find(key);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(images_.size());
    images_.push_back({id, scene, render_scene(scene, resolution_)});
    ids_.emplace(std::move(key), id);
    return id;
  }
  bool contains(const SceneDescription& scene) const { return ids_.contains(scene.key()); }
  std::size_t size() const { return images_.size(); }
  std::vector<GalleryImage> take() { return std::move(images_); }

 private:
  int resolution_;
  std::vector<GalleryImage> images_;
  std::unordered_map<std::string, int> ids_;
};

struct GroupDraft {
  SceneDescription reference;
  std::vector<SceneDescription> members;                // kSubsetGroupSize
  std::vector<std::vector<AtomicEdit>> member_edits;    // aligned with members
  std::vector<int> target_order;                        // permutation of member slots
};

GroupDraft draw_group(Rng& rng, const GenerationConfig& cfg) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    GroupDraft g;
    g.reference = random_scene(rng, cfg);
    const int n_obj = static_cast<int>(g.reference.objects.size());
    const int capacity = cfg.grid_size * cfg.grid_size;

    // Every member applies the same net count change, so the group shares
    // background and object count and differs only in details.
    int delta = 0;
    const double u = rng.uniform();
    if (u < 0.25 && n_obj >= 2) delta = -1;
    else if (u >= 0.75 && n_obj < capacity) delta = +1;

    std::vector<std::string> seen_keys = {g.reference.key()};
    int failures = 0;
    while (static_cast<int>(g.members.size()) < kSubsetGroupSize && failures < 200) {
      const int length = rng.range(1, cfg.max_edits);
      const int structural_at = delta != 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(length))) : -1;
      SceneDescription cur = g.reference;
      std::vector<AtomicEdit> chain;
      std::set<Cell> touched;
      bool ok = true;
      for (int k = 0; k < length && ok; ++k) {
        EditVerb verb;
        if (k == structural_at) verb = delta > 0 ? EditVerb::kAdd : EditVerb::kRemove;
        else verb = rng.bernoulli(0.5) ? EditVerb::kRecolor : EditVerb::kMove;
        auto e = random_edit(rng, cur, verb, touched);
        if (!e) {
          ok = false;
          break;
        }
        cur = apply_edit(cur, *e);
        mark_touched(*e, touched);
        chain.push_back(*e);
      }
      auto key = cur.key();
      if (!ok || std::find(seen_keys.begin(), seen_keys.end(), key) != seen_keys.end()) {
        ++failures;
        continue;
      }
      seen_keys.push_back(std::move(key));
      g.members.push_back(std::move(cur));
      g.member_edits.push_back(std::move(chain));
    }
    if (static_cast<int>(g.members.size()) != kSubsetGroupSize) continue;
    g.target_order.resize(kSubsetGroupSize);
    for (int i = 0; i < kSubsetGroupSize; ++i) g.target_order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(g.target_order.begin(), g.target_order.end());
    return g;
  }
  throw ConfigError("unable to draw a subset group under the generation config");
}

}  // namespace

std::string to_string(DatasetKind k) {
  return k == DatasetKind::kEditPretrain ? "edit_pretrain" : "cir_finetune";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "edit_pretrain") return DatasetKind::kEditPretrain;
  if (s == "cir_finetune") return DatasetKind::kCirFinetune;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

void GenerationConfig::validate() const {
  if (grid_size < 2 || grid_size > kMaxGridSize) throw ConfigError("grid_size must be in [2, 8]");
  if (resolution <= 0 || resolution % grid_size != 0)
    throw ConfigError("resolution must be a positive multiple of grid_size");
  if (min_objects < 1 || max_objects < min_objects || max_objects > grid_size * grid_size - 1)
    throw ConfigError("object counts must satisfy 1 <= min_objects <= max_objects < grid_size^2");
  if (max_edits < 1 || max_edits > 3) throw ConfigError("max_edits must be in [1, 3]");
  if (triplets_per_group < 1 || triplets_per_group > kSubsetGroupSize)
    throw ConfigError("triplets_per_group must be in [1, 6]");
  if (gallery_size < 0) throw ConfigError("gallery_size must be non-negative");
}

const GalleryImage& TripletDataset::image(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= gallery.size())
    throw ValidationError("image id " + std::to_string(id) + " not in gallery");
  return gallery[static_cast<std::size_t>(id)];
}

void TripletDataset::validate() const {
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].id != static_cast<int>(i)) throw ValidationError("gallery ids must be dense and ordered");
    validate_scene(gallery[i].scene);
  }
  for (const auto& t : triplets) {
    const auto& ref = image(t.reference_id);
    const auto& tgt = image(t.target_id);
    if (ref.image == tgt.image) throw ValidationError("reference and target images are identical");
    for (int tok : t.tokens)
      if (tok < 0 || tok >= vocabulary.size()) throw ValidationError("token id outside vocabulary");
    if (t.subset_group) {
      auto it = groups.find(*t.subset_group);
      if (it == groups.end()) throw ValidationError("triplet references unknown subset group");
      if (std::find(it->second.begin(), it->second.end(), t.target_id) == it->second.end())
        throw ValidationError("triplet target is not a member of its subset group");
    } else if (kind == DatasetKind::kCirFinetune) {
      throw ValidationError("cir_finetune triplet without subset group");
    }
  }
  for (const auto& [gid, members] : groups) {
    if (members.size() != static_cast<std::size_t>(kSubsetGroupSize))
      throw ValidationError("subset group " + std::to_string(gid) + " does not have exactly 6 members");
    std::set<int> uniq(members.begin(), members.end());
    if (uniq.size() != members.size()) throw ValidationError("subset group has duplicate members");
    for (int m : members) image(m);
  }
}

TripletDataset generate_edit_pretrain_set(std::uint64_t seed, int count, const GenerationConfig& config) {
  if (count < 1) throw ConfigError("count must be >= 1");
  config.validate();
  TripletDataset ds;
  ds.kind = DatasetKind::kEditPretrain;
  ds.seed = seed;
  ds.count = count;
  ds.config = config;

  GalleryBuilder gallery(config.resolution);
  constexpr std::array<EditVerb, 4> kVerbs = {EditVerb::kAdd, EditVerb::kRemove, EditVerb::kRecolor, EditVerb::kMove};
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::substream(seed, "edit_pretrain", static_cast<std::uint64_t>(i));
    for (;;) {
      SceneDescription ref = random_scene(rng, config);
      auto edit = random_edit(rng, ref, kVerbs[rng.below(kVerbs.size())], {});
      if (!edit) continue;
      SceneDescription tgt = apply_edit(ref, *edit);
      Triplet t;
      t.reference_id = gallery.add(ref);
      t.target_id = gallery.add(tgt);
      t.edits = {*edit};
      t.tokens = ds.vocabulary.encode(edit_phrase(*edit));
      ds.triplets.push_back(std::move(t));
      break;
    }
  }
  ds.gallery = gallery.take();
  return ds;
}

TripletDataset generate_cir_finetune_set(std::uint64_t seed, int count, const GenerationConfig& config) {
  if (count < 1) throw ConfigError("count must be >= 1");
  config.validate();
  TripletDataset ds;
  ds.kind = DatasetKind::kCirFinetune;
  ds.seed = seed;
  ds.count = count;
  ds.config = config;

  GalleryBuilder gallery(config.resolution);
  const int per_group = config.triplets_per_group;
  const int n_groups = (count + per_group - 1) / per_group;
  for (int g = 0; g < n_groups; ++g) {
    Rng rng = Rng::substream(seed, "cir_finetune", static_cast<std::uint64_t>(g));
    GroupDraft draft = draw_group(rng, config);
    const int ref_id = gallery.add(draft.reference);
    std::vector<int> member_ids;
    for (const auto& m : draft.members) member_ids.push_back(gallery.add(m));
    ds.groups.emplace(g, member_ids);

    const int n_here = std::min(per_group, count - g * per_group);
    for (int k = 0; k < n_here; ++k) {
      const auto slot = static_cast<std::size_t>(draft.target_order[static_cast<std::size_t>(k)]);
      Triplet t;
      t.reference_id = ref_id;
      t.target_id = member_ids[slot];
      t.edits = draft.member_edits[slot];
      t.tokens = ds.vocabulary.encode(edits_phrase(t.edits));
      t.subset_group = g;
      ds.triplets.push_back(std::move(t));
    }
  }

  if (config.gallery_size > 0) {
    if (gallery.size() > static_cast<std::size_t>(config.gallery_size))
      throw ConfigError("gallery_size " + std::to_string(config.gallery_size) + " is smaller than the " +
                        std::to_string(gallery.size()) + " images the groups need");
    for (std::uint64_t k = 0; gallery.size() < static_cast<std::size_t>(config.gallery_size); ++k) {
      Rng rng = Rng::substream(seed, "distractor", k);
      auto scene = random_scene(rng, config);
      if (!gallery.contains(scene)) gallery.add(scene);
    }
  }
  ds.gallery = gallery.take();
  return ds;
}

double mean_l1_distance(const Image& a, const Image& b) {
  if (a.pixels.size() != b.pixels.size()) throw ShapeError("image shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) sum += std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
  return sum / static_cast<double>(a.pixels.size());
}

}  // namespace dfusion
