#include "detailfusion/cli/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "detailfusion/cli/run_manifest.hpp"
#include "detailfusion/common/digest.hpp"
#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/dataset_io.hpp"
#include "detailfusion/retrieval/evaluate.hpp"
#include "detailfusion/training/features.hpp"
#include "detailfusion/training/trainer.hpp"

namespace dfusion {

namespace fs = std::filesystem;

namespace {

fs::path output_root() {
  const char* env = std::getenv("DFUSION_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

struct GenerateArgs {
  std::string kind = "edit_pretrain";
  std::uint64_t seed = 7;
  int count = 0;
  std::string out;
  GenerationConfig gen;
};

struct TrainArgs {
  std::string config, in, out, dataset, val_dataset;
};

struct EvalArgs {
  std::string checkpoint, dataset, out;
  std::vector<std::string> modes;
};

struct RetrieveArgs {
  std::string checkpoint, dataset, out, mode = "single", branch = "di";
  int query_id = 0;
  int k = 10;
};

RunManifest start_manifest(const std::string& command, int argc, const char* const* argv) {
  RunManifest m;
  m.command = command;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  m.started_utc = utc_timestamp();
  return m;
}

int run_generate(const GenerateArgs& a, RunManifest m, std::ostream& out) {
  const DatasetKind kind = parse_dataset_kind(a.kind);
  const int count = a.count > 0 ? a.count : (kind == DatasetKind::kEditPretrain ? 2000 : 1000);
  const fs::path dir = a.out.empty() ? output_root() / ("data_" + a.kind) : fs::path(a.out);
  const TripletDataset ds = kind == DatasetKind::kEditPretrain ? generate_edit_pretrain_set(a.seed, count, a.gen)
                                                               : generate_cir_finetune_set(a.seed, count, a.gen);
  save_dataset(ds, dir);
  m.seed = a.seed;
  m.dataset_digests[dir.string()] = dataset_digest(dir);
  m.artifacts["dataset"] = dir.string();
  m.finished_utc = utc_timestamp();
  m.write(dir / "run_manifest.json");
  out << fmt::format("wrote {} triplets, {} images to {}\n", ds.triplets.size(), ds.gallery.size(), dir.string());
  return kExitOk;
}

int run_train(const std::string& command, int stage, const TrainArgs& a, RunManifest m, std::ostream& out) {
  TrainConfig cfg = load_train_config(a.config);
  if (!a.dataset.empty()) cfg.dataset = a.dataset;
  if (!a.val_dataset.empty()) cfg.val_dataset = a.val_dataset;
  if (!a.in.empty()) cfg.checkpoint_in = a.in;
  if (!a.out.empty()) cfg.checkpoint_out = a.out;
  const bool spn = command == "spn";
  if (!spn && cfg.stage != stage)
    throw ConfigError(fmt::format("{} expects stage = {}, config has stage = {}", command, stage, cfg.stage));
  if (cfg.dataset.empty()) throw ConfigError("no dataset given (config key 'dataset' or --dataset)");
  if (cfg.checkpoint_out.empty()) cfg.checkpoint_out = (output_root() / (command + ".ckpt")).string();

  const TripletDataset data = load_dataset(cfg.dataset);
  m.dataset_digests[cfg.dataset] = dataset_digest(cfg.dataset);
  std::optional<Checkpoint> init;
  if (!cfg.checkpoint_in.empty()) {
    init = load_checkpoint(cfg.checkpoint_in);
    m.checkpoint_digests[cfg.checkpoint_in] = sha256_file(cfg.checkpoint_in);
  }
  if ((stage == 3 || spn) && !init) throw ConfigError(command + " needs an input checkpoint (--in)");

  StageOutput result;
  if (spn) {
    result = run_spn_phase(cfg, data, *init);
  } else if (stage == 1) {
    std::optional<TripletDataset> val;
    if (!cfg.val_dataset.empty()) {
      val = load_dataset(cfg.val_dataset);
      m.dataset_digests[cfg.val_dataset] = dataset_digest(cfg.val_dataset);
    }
    result = run_stage1(cfg, data, init ? &*init : nullptr, val ? &*val : nullptr);
  } else if (stage == 2) {
    result = run_stage2(cfg, data, init ? &*init : nullptr);
  } else {
    result = run_stage3(cfg, data, *init);
  }

  const fs::path ckpt = cfg.checkpoint_out;
  save_checkpoint(result.checkpoint, ckpt);
  const fs::path trace = cfg.loss_trace.empty() ? sibling(ckpt, ".loss.csv") : fs::path(cfg.loss_trace);
  result.trace.write_csv(trace);

  m.seed = cfg.seed;
  m.config_digest = cfg.digest();
  m.checkpoint_digests[ckpt.string()] = sha256_file(ckpt);
  m.artifacts["checkpoint"] = ckpt.string();
  m.artifacts["loss_trace"] = trace.string();
  m.artifacts["config"] = a.config;
  m.finished_utc = utc_timestamp();
  m.write(sibling(ckpt, ".manifest.json"));
  const auto& rows = result.trace.rows;
  out << fmt::format("{}: {} steps, final loss {:.6f}, checkpoint {}\n", command, rows.size(),
                     rows.empty() ? 0.0 : rows.back()[2], ckpt.string());
  return kExitOk;
}

int run_evaluate(const EvalArgs& a, RunManifest m, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const TripletDataset ds = load_dataset(a.dataset);
  std::vector<EvalMode> modes;
  for (const auto& s : a.modes) modes.push_back(parse_eval_mode(s));
  if (modes.empty()) modes = kAllEvalModes;
  EvaluationReport report = evaluate(ckpt.model, ds, modes);
  report.checkpoint_stage = ckpt.meta.stage;
  const fs::path path = a.out.empty() ? output_root() / "report.json" : fs::path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << report.to_json().dump(2) << "\n";
  }
  m.dataset_digests[a.dataset] = dataset_digest(a.dataset);
  m.checkpoint_digests[a.checkpoint] = sha256_file(a.checkpoint);
  m.seed = ckpt.meta.seed;
  m.artifacts["report"] = path.string();
  m.finished_utc = utc_timestamp();
  m.write(sibling(path, ".manifest.json"));
  for (const auto& r : report.modes)
    out << fmt::format("{:<11} R@1 {:>6}  R@5 {:>6}  Rs@1 {:>6}  Avg {:>6}\n", to_string(r.mode),
                       recall_json(r.overall)["percent"]["R@1"].get<std::string>(),
                       recall_json(r.overall)["percent"]["R@5"].get<std::string>(),
                       recall_json(r.overall)["percent"]["Rs@1"].get<std::string>(),
                       recall_json(r.overall)["percent"]["Avg"].get<std::string>());
  return kExitOk;
}

int run_retrieve(const RetrieveArgs& a, RunManifest m, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const TripletDataset ds = load_dataset(a.dataset);
  if (a.query_id < 0 || a.query_id >= static_cast<int>(ds.triplets.size()))
    throw UsageError(fmt::format("query id {} outside [0, {})", a.query_id, ds.triplets.size()));
  const Model& model = ckpt.model;
  const Mat<float> vision = vision_features(model.encoder, ds);
  std::vector<int> ids(ds.gallery.size());
  std::iota(ids.begin(), ids.end(), 0);
  const GalleryIndex index = make_index(ids, encode_image_set(model.encoder, vision, ids).cls);
  const std::vector<int> q = {a.query_id};

  RankedResult r;
  auto span_of = [](const Mat<float>& m) { return std::span<const float>(m.data(), static_cast<std::size_t>(m.cols())); };
  if (a.mode == "single") {
    const EncodedSet e = encode_query_set(model.encoder, vision, ds, q, parse_branch(a.branch));
    r = retrieve(span_of(e.cls), index, a.k);
  } else if (a.mode == "score_sum") {
    const EncodedSet d = encode_query_set(model.encoder, vision, ds, q, Branch::kDI);
    const EncodedSet g = encode_query_set(model.encoder, vision, ds, q, Branch::kGM);
    r = retrieve(span_of(d.cls), index, a.k, RankMode::kScoreSum, span_of(g.cls));
  } else if (a.mode == "compositor") {
    const EncodedSet d = encode_query_set(model.encoder, vision, ds, q, Branch::kDI);
    const EncodedSet g = encode_query_set(model.encoder, vision, ds, q, Branch::kGM);
    const Mat<float> fused = l2_normalize_rows(model.compositor.forward(g.tokens, d.tokens, 1).fused);
    r = retrieve(span_of(fused), index, a.k);
  } else {
    throw UsageError("unknown retrieval mode '" + a.mode + "'");
  }
  r.query_id = a.query_id;
  nlohmann::json j = to_json(r);
  j["mode"] = a.mode;
  j["target_id"] = ds.triplets[static_cast<std::size_t>(a.query_id)].target_id;
  j["text"] = ds.vocabulary.decode(ds.triplets[static_cast<std::size_t>(a.query_id)].tokens);
  if (a.out.empty()) {
    out << j.dump(2) << "\n";
  } else {
    {
      std::ofstream f(a.out, std::ios::trunc);
      if (!f) throw IoError("cannot write " + a.out);
      f << j.dump(2) << "\n";
    }
    m.dataset_digests[a.dataset] = dataset_digest(a.dataset);
    m.checkpoint_digests[a.checkpoint] = sha256_file(a.checkpoint);
    m.seed = ckpt.meta.seed;
    m.artifacts["ranking"] = a.out;
    m.finished_utc = utc_timestamp();
    m.write(sibling(a.out, ".manifest.json"));
  }
  return kExitOk;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-branch composed image retrieval on synthetic scenes", "dfusion"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Generate a synthetic triplet dataset");
  g->add_option("--kind", gen.kind, "edit_pretrain or cir_finetune")->check(CLI::IsMember({"edit_pretrain", "cir_finetune"}));
  g->add_option("--seed", gen.seed, "Generation seed");
  g->add_option("--count", gen.count, "Number of triplets (default 2000 / 1000)");
  g->add_option("--out", gen.out, "Output directory");
  g->add_option("--grid-size", gen.gen.grid_size);
  g->add_option("--resolution", gen.gen.resolution);
  g->add_option("--min-objects", gen.gen.min_objects);
  g->add_option("--max-objects", gen.gen.max_objects);
  g->add_option("--max-edits", gen.gen.max_edits);
  g->add_option("--triplets-per-group", gen.gen.triplets_per_group);
  g->add_option("--gallery-size", gen.gen.gallery_size, "Pad the gallery with distractors up to this size");

  TrainArgs train;
  struct TrainCmd {
    const char* name;
    int stage;
    const char* help;
  };
  const TrainCmd train_cmds[] = {{"pretrain", 1, "Stage 1: pretrain the DI branch on edit data"},
                                 {"finetune", 2, "Stage 2: jointly fine-tune the DI and GM branches"},
                                 {"train-compositor", 3, "Stage 3: train the compositor on frozen branches"},
                                 {"spn", 0, "Full-gallery phase for the GM branch or the compositor"}};
  std::map<CLI::App*, TrainCmd> train_subs;
  for (const auto& c : train_cmds) {
    auto* s = app.add_subcommand(c.name, c.help);
    s->add_option("--config", train.config, "Training config file")->required()->check(CLI::ExistingFile);
    s->add_option("--in", train.in, "Input checkpoint");
    s->add_option("--out", train.out, "Output checkpoint");
    s->add_option("--dataset", train.dataset, "Dataset directory (overrides the config)");
    if (c.stage == 1) s->add_option("--val-dataset", train.val_dataset, "Validation dataset for best-epoch selection");
    train_subs[s] = c;
  }

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Compute retrieval metrics for a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--dataset", ev.dataset)->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Report path");
  e->add_option("--modes", ev.modes, "Subset of di, gm, score_sum, compositor")->delimiter(',');

  RetrieveArgs rt;
  auto* r = app.add_subcommand("retrieve", "Rank the gallery for one query");
  r->add_option("--checkpoint", rt.checkpoint)->required()->check(CLI::ExistingFile);
  r->add_option("--dataset", rt.dataset)->required()->check(CLI::ExistingDirectory);
  r->add_option("--query-id", rt.query_id)->required();
  r->add_option("--k", rt.k);
  r->add_option("--mode", rt.mode)->check(CLI::IsMember({"single", "score_sum", "compositor"}));
  r->add_option("--branch", rt.branch, "Branch for single mode")->check(CLI::IsMember({"di", "gm"}));
  r->add_option("--out", rt.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    RunManifest m = start_manifest(name, argc, argv);
    if (sub == g) return run_generate(gen, m, out);
    if (sub == e) return run_evaluate(ev, m, out);
    if (sub == r) return run_retrieve(rt, m, out);
    const TrainCmd& c = train_subs.at(sub);
    return run_train(name, c.stage, train, m, out);
  } catch (const UsageError& ex) {
    err << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << ex.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace dfusion
