#include "detailfusion/training/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>

#include "detailfusion/common/errors.hpp"
#include "detailfusion/losses/losses.hpp"
#include "detailfusion/retrieval/retrieval.hpp"
#include "detailfusion/training/features.hpp"
#include "detailfusion/training/optimizer.hpp"

namespace dfusion {

std::vector<double> LossTrace::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw UsageError("loss trace has no column '" + name + "'");
  const auto c = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

std::string LossTrace::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
  out += "\n";
  char buf[64];
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ",";
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), r[i]);
      out.append(buf, p);
    }
    out += "\n";
  }
  return out;
}

void LossTrace::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_csv();
}

namespace {

using Vec = Eigen::VectorXf;

struct Context {
  const TrainConfig& cfg;
  const TripletDataset& data;
  Model& model;
  Mat<float> vision;  // cached features when the vision encoder is frozen
  int P = 0;
  int K1 = 0;

  Context(const TrainConfig& c, const TripletDataset& d, Model& m) : cfg(c), data(d), model(m) {
    P = m.config.num_patches();
    K1 = m.config.num_tokens();
    if (d.config.resolution != m.config.image_size)
      throw ConfigError("dataset resolution " + std::to_string(d.config.resolution) + " does not match model image_size " +
                        std::to_string(m.config.image_size));
    if (d.vocabulary.size() > m.config.vocab_size) throw ConfigError("dataset vocabulary exceeds the model vocab_size");
    if (m.is_frozen(ParamGroup::kVision)) vision = vision_features(m.encoder, d);
  }
};

struct VisionPass {
  Mat<float> feats;
  VisionTape<float> tape;
  bool taped = false;
};

VisionPass vision_pass(Context& ctx, const std::vector<int>& ids) {
  VisionPass v;
  if (ctx.model.is_frozen(ParamGroup::kVision)) {
    v.feats = gather_rows(ctx.vision, ids, ctx.P);
  } else {
    std::vector<const Image*> imgs;
    for (int id : ids) imgs.push_back(&ctx.data.image(id).image);
    v.feats = ctx.model.encoder.vision_encode(imgs, &v.tape);
    v.taped = true;
  }
  return v;
}

struct BranchPass {
  VisionPass vis;
  EncodeTape<float> tape;
  Vec norms;
  Mat<float> tokens;
  Mat<float> cls;  // unit norm
};

BranchPass query_pass(Context& ctx, Branch branch, const std::vector<int>& refs,
                      const std::vector<std::vector<int>>& texts) {
  BranchPass p;
  p.vis = vision_pass(ctx, refs);
  p.tokens = ctx.model.encoder.encode_queries(branch, p.vis.feats, texts, &p.tape);
  p.cls = l2_normalize_rows(cls_rows(p.tokens, ctx.K1), &p.norms);
  return p;
}

BranchPass image_pass(Context& ctx, const std::vector<int>& ids) {
  BranchPass p;
  p.vis = vision_pass(ctx, ids);
  p.tokens = ctx.model.encoder.encode_images(p.vis.feats, static_cast<int>(ids.size()), &p.tape);
  p.cls = l2_normalize_rows(cls_rows(p.tokens, ctx.K1), &p.norms);
  return p;
}

void branch_backward(Context& ctx, BranchPass& p, const Mat<float>& d_cls) {
  const Mat<float> d_raw = l2_normalize_rows_backward(p.cls, p.norms, d_cls);
  Mat<float> d_tokens = Mat<float>::Zero(p.tokens.rows(), p.tokens.cols());
  for (Eigen::Index i = 0; i < d_raw.rows(); ++i) d_tokens.row(i * ctx.K1) = d_raw.row(i);
  const Mat<float> dv = ctx.model.encoder.backward(p.tape, d_tokens);
  if (p.vis.taped) ctx.model.encoder.vision.backward(p.vis.tape, dv);
}

void set_trainable(Model& m, std::initializer_list<ParamGroup> groups, bool vision) {
  for (ParamGroup g : kAllParamGroups) m.set_frozen(g, true);
  for (ParamGroup g : groups) m.set_frozen(g, false);
  m.set_frozen(ParamGroup::kVision, !vision);
}

AdamWOptions adam_options(const TrainConfig& cfg) {
  return {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};
}

struct Batches {
  int epochs_done = 0;
  std::int64_t steps = 0;
};

// Runs `step(indices, epoch)` over shuffled mini-batches of `items`, with a
// per-epoch seeded permutation and the last partial batch kept. `after_epoch`
// is called at the end of every complete epoch.
template <typename Step, typename AfterEpoch>
Batches run_epochs(const TrainConfig& cfg, const std::string& tag, const std::vector<int>& items, Step&& step,
                   AfterEpoch&& after_epoch) {
  Batches b;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = items;
    Rng rng = Rng::substream(cfg.seed, "shuffle." + tag, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && b.steps >= cfg.max_steps) return b;
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      step(std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e)),
           epoch);
      ++b.steps;
    }
    b.epochs_done = epoch + 1;
    after_epoch(epoch);
  }
  return b;
}

struct TripletBatch {
  std::vector<int> refs, targets;
  std::vector<std::vector<int>> texts;
};

TripletBatch gather(const TripletDataset& ds, const std::vector<int>& idx) {
  TripletBatch b;
  for (int i : idx) {
    const Triplet& t = ds.triplets[static_cast<std::size_t>(i)];
    b.refs.push_back(t.reference_id);
    b.targets.push_back(t.target_id);
    b.texts.push_back(t.tokens);
  }
  return b;
}

void record(Checkpoint& c, const TrainConfig& cfg, const TripletDataset& ds, const std::string& kind, const Batches& b,
            nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json h = {{"kind", kind},
                      {"stage", cfg.stage},
                      {"config_digest", cfg.digest()},
                      {"dataset", {{"kind", to_string(ds.kind)}, {"seed", ds.seed}, {"count", ds.count}}},
                      {"epochs", b.epochs_done},
                      {"steps", b.steps}};
  for (auto& [k, v] : extra.items()) h[k] = v;
  c.meta.stage = cfg.stage;
  c.meta.config_digest = cfg.digest();
  c.meta.history.push_back(h);
  c.meta.rng = {{"seed", cfg.seed}, {"epochs_done", b.epochs_done}, {"steps", b.steps}};
}

void require_kind(const TripletDataset& ds, DatasetKind kind, const char* stage) {
  if (ds.kind != kind)
    throw ConfigError(std::string(stage) + " needs a " + to_string(kind) + " dataset, got " + to_string(ds.kind));
  if (ds.triplets.empty()) throw ConfigError(std::string(stage) + " dataset has no triplets");
}

Checkpoint fresh_or_copy(const TrainConfig& cfg, const Checkpoint* init) {
  if (init) return *init;
  Checkpoint c;
  c.model = Model(cfg.model, cfg.seed);
  c.meta.seed = cfg.seed;
  return c;
}

// R@1 of DI queries over the images referenced by `triplets` of `ds`.
double di_recall_at_1(const Model& model, const TripletDataset& ds, const std::vector<int>& triplets) {
  std::set<int> id_set;
  for (int i : triplets) {
    id_set.insert(ds.triplets[static_cast<std::size_t>(i)].reference_id);
    id_set.insert(ds.triplets[static_cast<std::size_t>(i)].target_id);
  }
  const std::vector<int> ids(id_set.begin(), id_set.end());
  // Vision features for just these images, laid out by position.
  std::vector<const Image*> imgs;
  for (int id : ids) imgs.push_back(&ds.image(id).image);
  Mat<float> vis(static_cast<Eigen::Index>(ids.size()) * model.config.num_patches(), model.config.width);
  const int P = model.config.num_patches();
  for (std::size_t s = 0; s < imgs.size(); s += 256) {
    const std::size_t e = std::min(imgs.size(), s + 256);
    std::vector<const Image*> chunk(imgs.begin() + static_cast<std::ptrdiff_t>(s), imgs.begin() + static_cast<std::ptrdiff_t>(e));
    vis.middleRows(static_cast<Eigen::Index>(s) * P, static_cast<Eigen::Index>(chunk.size()) * P) =
        model.encoder.vision_encode(chunk);
  }
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  const EncodedSet gal = encode_image_set(model.encoder, vis, pos);
  const GalleryIndex index = make_index(ids, gal.cls);

  // Remap the subset of triplets onto positions so encode_query_set can gather.
  TripletDataset view;
  view.vocabulary = ds.vocabulary;
  std::map<int, int> where;
  for (std::size_t k = 0; k < ids.size(); ++k) where[ids[k]] = static_cast<int>(k);
  std::vector<int> q;
  for (int i : triplets) {
    Triplet t = ds.triplets[static_cast<std::size_t>(i)];
    t.reference_id = where.at(t.reference_id);
    view.triplets.push_back(std::move(t));
    q.push_back(static_cast<int>(q.size()));
  }
  const EncodedSet qs = encode_query_set(model.encoder, vis, view, q, Branch::kDI);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < triplets.size(); ++k) {
    const auto scores = gallery_scores(std::span<const float>(qs.cls.row(static_cast<Eigen::Index>(k)).data(),
                                                              static_cast<std::size_t>(qs.cls.cols())),
                                       index);
    const RankedResult r = rank_scores(scores, index.ids, 1);
    if (r.ids[0] == ds.triplets[static_cast<std::size_t>(triplets[k])].target_id) ++hits;
  }
  return triplets.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(triplets.size());
}

// Compositor inputs for a list of triplets: G(Q), D(Q) tokens and unit D(I_t).
struct CompositorInputs {
  Mat<float> gm_tokens, di_tokens, target_cls;
};

CompositorInputs compositor_inputs(const Context& ctx, const std::vector<int>& triplets) {
  CompositorInputs in;
  const auto& enc = ctx.model.encoder;
  in.gm_tokens = encode_query_set(enc, ctx.vision, ctx.data, triplets, Branch::kGM).tokens;
  in.di_tokens = encode_query_set(enc, ctx.vision, ctx.data, triplets, Branch::kDI).tokens;
  std::vector<int> targets;
  for (int i : triplets) targets.push_back(ctx.data.triplets[static_cast<std::size_t>(i)].target_id);
  in.target_cls = encode_image_set(enc, ctx.vision, targets).cls;
  return in;
}

Mat<float> rows_of(const Mat<float>& m, const std::vector<int>& idx, int per_item) { return gather_rows(m, idx, per_item); }

GalleryIndex full_gallery(const Context& ctx) {
  std::vector<int> ids(ctx.data.gallery.size());
  std::iota(ids.begin(), ids.end(), 0);
  return make_index(ids, encode_image_set(ctx.model.encoder, ctx.vision, ids).cls);
}

std::vector<std::int64_t> target_ids(const TripletDataset& ds, const std::vector<int>& idx) {
  std::vector<std::int64_t> out;
  for (int i : idx) out.push_back(ds.triplets[static_cast<std::size_t>(i)].target_id);
  return out;
}

}  // namespace

StageOutput run_stage1(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint* init,
                       const TripletDataset* val) {
  cfg.validate();
  if (cfg.stage != 1) throw ConfigError("run_stage1 needs stage = 1");
  require_kind(data, DatasetKind::kEditPretrain, "stage 1");
  StageOutput out;
  out.checkpoint = fresh_or_copy(cfg, init);
  Model& model = out.checkpoint.model;
  set_trainable(model, {ParamGroup::kDiEncoder, ParamGroup::kDiLinearH, ParamGroup::kDiLinearI}, cfg.vision_trainable);
  Context ctx(cfg, data, model);

  const int n = static_cast<int>(data.triplets.size());
  const int n_val = val ? 0 : static_cast<int>(static_cast<double>(n) * cfg.val_fraction);
  std::vector<int> train(static_cast<std::size_t>(n - n_val));
  std::iota(train.begin(), train.end(), 0);
  std::vector<int> held(static_cast<std::size_t>(n_val));
  std::iota(held.begin(), held.end(), n - n_val);
  std::vector<int> val_all;
  if (val) {
    val_all.resize(val->triplets.size());
    std::iota(val_all.begin(), val_all.end(), 0);
  }
  const TripletDataset& val_ds = val ? *val : data;
  const std::vector<int>& val_idx = val ? val_all : held;

  AdamW opt(model.trainable(), adam_options(cfg));
  out.trace.columns = {"step", "epoch", "loss_di"};
  Model best = model;
  double best_r1 = -1.0;

  Batches b = run_epochs(
      cfg, "stage1", train,
      [&](const std::vector<int>& idx, int epoch) {
        model.zero_grad();
        TripletBatch tb = gather(data, idx);
        BranchPass q = query_pass(ctx, Branch::kDI, tb.refs, tb.texts);
        BranchPass t = image_pass(ctx, tb.targets);
        BranchPass r = image_pass(ctx, tb.refs);
        ContrastiveBatch<float> cb{q.cls, t.cls, r.cls, std::nullopt, cfg.tau};
        LossResult<float> res = loss_di(cb);
        branch_backward(ctx, q, res.d_query);
        branch_backward(ctx, t, res.d_target);
        branch_backward(ctx, r, res.d_ref);
        opt.step();
        out.trace.rows.push_back({static_cast<double>(out.trace.rows.size()), static_cast<double>(epoch), res.value});
      },
      [&](int epoch) {
        if (val_idx.empty()) return;
        const double r1 = di_recall_at_1(model, val_ds, val_idx);
        out.val_recall_at_1.push_back(r1);
        if (r1 > best_r1) {
          best_r1 = r1;
          best = model;
          out.best_epoch = epoch;
        }
      });
  if (!val_idx.empty() && out.best_epoch >= 0) model = best;
  model.zero_grad();
  record(out.checkpoint, cfg, data, "stage1", b,
         {{"best_epoch", out.best_epoch}, {"val_recall_at_1", out.val_recall_at_1}, {"val_queries", val_idx.size()}});
  return out;
}

StageOutput run_stage2(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint* init) {
  cfg.validate();
  if (cfg.stage != 2) throw ConfigError("run_stage2 needs stage = 2");
  if (cfg.spn_target != SpnTarget::kNone) throw ConfigError("SPN configs run through run_spn_phase");
  require_kind(data, DatasetKind::kCirFinetune, "stage 2");
  if (cfg.sgn) {
    if (data.groups.empty()) throw ConfigError("sgn requires a dataset with subset groups");
    for (const auto& t : data.triplets)
      if (!t.subset_group) throw ConfigError("sgn requires every triplet to belong to a subset group");
  }
  StageOutput out;
  out.checkpoint = fresh_or_copy(cfg, init);
  Model& model = out.checkpoint.model;
  set_trainable(model,
                {ParamGroup::kDiEncoder, ParamGroup::kDiLinearH, ParamGroup::kDiLinearI, ParamGroup::kGmEncoder,
                 ParamGroup::kGmLinearH},
                cfg.vision_trainable);
  Context ctx(cfg, data, model);

  std::vector<int> items(data.triplets.size());
  std::iota(items.begin(), items.end(), 0);
  AdamW opt(model.trainable(), adam_options(cfg));
  out.trace.columns = {"step", "epoch", "loss", "loss_di", "loss_gm"};
  if (cfg.sgn) out.trace.columns.push_back("loss_di_base");

  Batches b = run_epochs(
      cfg, "stage2", items,
      [&](const std::vector<int>& idx, int epoch) {
        model.zero_grad();
        TripletBatch tb = gather(data, idx);
        BranchPass qd = query_pass(ctx, Branch::kDI, tb.refs, tb.texts);
        BranchPass qg = query_pass(ctx, Branch::kGM, tb.refs, tb.texts);
        BranchPass t = image_pass(ctx, tb.targets);
        BranchPass r = image_pass(ctx, tb.refs);
        ContrastiveBatch<float> di{qd.cls, t.cls, r.cls, std::nullopt, cfg.tau};
        ContrastiveBatch<float> gm{qg.cls, t.cls, std::nullopt, std::nullopt, cfg.tau};
        BranchPass g;
        if (cfg.sgn) {
          std::vector<int> members;
          for (int i : idx) {
            const Triplet& tr = data.triplets[static_cast<std::size_t>(i)];
            for (int m : data.groups.at(*tr.subset_group))
              if (m != tr.target_id) members.push_back(m);
          }
          g = image_pass(ctx, members);
          di.group = g.cls;
        }
        LossResult<float> ldi = cfg.sgn ? loss_di_sgn(di) : loss_di(di);
        LossResult<float> lgm = loss_gm(gm);
        const float gamma = static_cast<float>(cfg.gamma);
        const double total = ldi.value + cfg.gamma * lgm.value;
        branch_backward(ctx, qd, ldi.d_query);
        branch_backward(ctx, qg, gamma * lgm.d_query);
        branch_backward(ctx, t, ldi.d_target + gamma * lgm.d_target);
        branch_backward(ctx, r, ldi.d_ref);
        if (cfg.sgn) branch_backward(ctx, g, ldi.d_group);
        opt.step();
        std::vector<double> row = {static_cast<double>(out.trace.rows.size()), static_cast<double>(epoch), total,
                                   ldi.value, lgm.value};
        if (cfg.sgn) {
          ContrastiveBatch<float> base = di;
          base.group.reset();
          row.push_back(loss_di(base).value);
        }
        out.trace.rows.push_back(std::move(row));
      },
      [](int) {});
  model.zero_grad();
  record(out.checkpoint, cfg, data, "stage2", b, {{"sgn", cfg.sgn}, {"from_stage1", init != nullptr && init->meta.stage >= 1}});
  return out;
}

StageOutput run_stage3(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint& init) {
  cfg.validate();
  if (cfg.stage != 3) throw ConfigError("run_stage3 needs stage = 3");
  if (cfg.spn_target != SpnTarget::kNone) throw ConfigError("SPN configs run through run_spn_phase");
  if (cfg.vision_trainable) throw ConfigError("stage 3 trains the compositor only; the vision encoder stays frozen");
  require_kind(data, DatasetKind::kCirFinetune, "stage 3");
  StageOutput out;
  out.checkpoint = init;
  Model& model = out.checkpoint.model;
  // The compositor is trained from scratch with the (M, N) and modes of this config.
  ModelConfig mc = model.config;
  mc.compositor_m = cfg.model.compositor_m;
  mc.compositor_n = cfg.model.compositor_n;
  mc.compositor_heads = cfg.model.compositor_heads;
  mc.mlp_mult = cfg.model.mlp_mult;
  mc.extraction = cfg.model.extraction;
  mc.fusion = cfg.model.fusion;
  model.config = mc;
  model.encoder.config = mc;
  model.compositor = Compositor<float>(mc, cfg.seed);
  set_trainable(model, {ParamGroup::kCompositor}, false);
  Context ctx(cfg, data, model);

  std::vector<int> items(data.triplets.size());
  std::iota(items.begin(), items.end(), 0);
  CompositorInputs cache;
  if (cfg.cache_features) cache = compositor_inputs(ctx, items);

  AdamW opt(model.trainable(), adam_options(cfg));
  out.trace.columns = {"step", "epoch", "loss_compositor", "mean_lambda"};
  Batches b = run_epochs(
      cfg, "stage3", items,
      [&](const std::vector<int>& idx, int epoch) {
        model.zero_grad();
        CompositorInputs in;
        if (cfg.cache_features) {
          in.gm_tokens = rows_of(cache.gm_tokens, idx, ctx.K1);
          in.di_tokens = rows_of(cache.di_tokens, idx, ctx.K1);
          in.target_cls = rows_of(cache.target_cls, idx, 1);
        } else {
          in = compositor_inputs(ctx, idx);
        }
        const int B = static_cast<int>(idx.size());
        ComposeTape<float> tape;
        ComposeOutput<float> fo = model.compositor.forward(in.gm_tokens, in.di_tokens, B, &tape);
        Vec norms;
        const Mat<float> fused = l2_normalize_rows(fo.fused, &norms);
        LossResult<float> res = loss_compositor(ContrastiveBatch<float>{fused, in.target_cls, std::nullopt, std::nullopt, cfg.tau});
        model.compositor.backward(tape, l2_normalize_rows_backward(fused, norms, res.d_query));
        opt.step();
        const double mean_lambda = std::accumulate(fo.lambdas.begin(), fo.lambdas.end(), 0.0) / B;
        out.trace.rows.push_back({static_cast<double>(out.trace.rows.size()), static_cast<double>(epoch), res.value, mean_lambda});
      },
      [](int) {});
  model.zero_grad();
  record(out.checkpoint, cfg, data, "stage3", b,
         {{"compositor_m", mc.compositor_m}, {"compositor_n", mc.compositor_n},
          {"extraction", to_string(mc.extraction)}, {"fusion", to_string(mc.fusion)},
          {"cache_features", cfg.cache_features}});
  return out;
}

StageOutput run_spn_phase(const TrainConfig& cfg, const TripletDataset& data, const Checkpoint& init) {
  cfg.validate();
  if (cfg.spn_target == SpnTarget::kNone) throw ConfigError("spn phase needs spn_target = gm or compositor");
  if (cfg.vision_trainable) throw ConfigError("the vision encoder stays frozen during SPN phases");
  require_kind(data, DatasetKind::kCirFinetune, "spn phase");
  StageOutput out;
  out.checkpoint = init;
  Model& model = out.checkpoint.model;
  const bool gm_phase = cfg.spn_target == SpnTarget::kGm;
  if (gm_phase) set_trainable(model, {ParamGroup::kGmEncoder, ParamGroup::kGmLinearH}, false);
  else set_trainable(model, {ParamGroup::kCompositor}, false);
  Context ctx(cfg, data, model);

  // D(I) for every gallery image, computed once and frozen for the phase.
  const GalleryIndex gallery = full_gallery(ctx);
  const std::vector<std::int64_t> gallery_ids(gallery.ids.begin(), gallery.ids.end());
  for (const auto& t : data.triplets)
    if (t.target_id < 0 || t.target_id >= gallery.size()) throw ConfigError("triplet target outside the dataset gallery");

  std::vector<int> items(data.triplets.size());
  std::iota(items.begin(), items.end(), 0);
  CompositorInputs cache;
  if (!gm_phase) cache = compositor_inputs(ctx, items);

  AdamW opt(model.trainable(), adam_options(cfg));
  out.trace.columns = {"step", "epoch", "loss"};
  Batches b = run_epochs(
      cfg, gm_phase ? "spn_gm" : "spn_compositor", items,
      [&](const std::vector<int>& idx, int epoch) {
        model.zero_grad();
        const auto tids = target_ids(data, idx);
        double value = 0.0;
        if (gm_phase) {
          TripletBatch tb = gather(data, idx);
          BranchPass q = query_pass(ctx, Branch::kGM, tb.refs, tb.texts);
          LossResult<float> res = loss_gm_spn(q.cls, tids, gallery.features, gallery_ids, cfg.tau);
          branch_backward(ctx, q, res.d_query);
          value = res.value;
        } else {
          const int B = static_cast<int>(idx.size());
          ComposeTape<float> tape;
          ComposeOutput<float> fo = model.compositor.forward(rows_of(cache.gm_tokens, idx, ctx.K1),
                                                             rows_of(cache.di_tokens, idx, ctx.K1), B, &tape);
          Vec norms;
          const Mat<float> fused = l2_normalize_rows(fo.fused, &norms);
          LossResult<float> res = loss_compositor_spn(fused, tids, gallery.features, gallery_ids, cfg.tau);
          model.compositor.backward(tape, l2_normalize_rows_backward(fused, norms, res.d_query));
          value = res.value;
        }
        opt.step();
        out.trace.rows.push_back({static_cast<double>(out.trace.rows.size()), static_cast<double>(epoch), value});
      },
      [](int) {});
  model.zero_grad();
  record(out.checkpoint, cfg, data, gm_phase ? "spn_gm" : "spn_compositor", b, {{"gallery_size", gallery.size()}});
  return out;
}

}  // namespace dfusion
