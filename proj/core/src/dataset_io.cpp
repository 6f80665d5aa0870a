#include "detailfusion/data/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "detailfusion/common/errors.hpp"

namespace dfusion {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + p.string());
}

json config_to_json(const GenerationConfig& c) {
  return json{{"grid_size", c.grid_size},   {"resolution", c.resolution},
              {"min_objects", c.min_objects}, {"max_objects", c.max_objects},
              {"max_edits", c.max_edits},   {"triplets_per_group", c.triplets_per_group},
              {"gallery_size", c.gallery_size}};
}

GenerationConfig config_from_json(const json& j) {
  GenerationConfig c;
  c.grid_size = j.at("grid_size").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.min_objects = j.at("min_objects").get<int>();
  c.max_objects = j.at("max_objects").get<int>();
  c.max_edits = j.at("max_edits").get<int>();
  c.triplets_per_group = j.at("triplets_per_group").get<int>();
  c.gallery_size = j.at("gallery_size").get<int>();
  return c;
}

Cell cell_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

void append_f32_le(std::string& out, const float* data, std::size_t n) {
  const std::size_t base = out.size();
  out.resize(base + n * 4);
  char* dst = out.data() + base;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, data, n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
      for (int b = 0; b < 4; ++b) dst[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
}

void read_f32_le(const char* bytes, float* out, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out, bytes, n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
      out[i] = std::bit_cast<float>(bits);
    }
  }
}

json scene_to_json(const SceneDescription& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"shape", to_string(o.shape)}, {"color", to_string(o.color)}, {"cell", {o.cell.row, o.cell.col}}});
  }
  return json{{"grid_size", s.grid_size}, {"background", to_string(s.background)}, {"objects", objs}};
}

SceneDescription scene_from_json(const json& j) {
  SceneDescription s;
  s.grid_size = j.at("grid_size").get<int>();
  s.background = parse_color(j.at("background").get<std::string>());
  for (const auto& o : j.at("objects")) {
    s.objects.push_back({parse_shape(o.at("shape").get<std::string>()), parse_color(o.at("color").get<std::string>()),
                         cell_from_json(o.at("cell"))});
  }
  s.canonicalize();
  return s;
}

json edit_to_json(const AtomicEdit& e) {
  json j{{"verb", to_string(e.verb)}, {"shape", to_string(e.shape)}, {"cell", {e.cell.row, e.cell.col}}};
  if (e.verb == EditVerb::kAdd || e.verb == EditVerb::kRecolor) j["color"] = to_string(e.color);
  if (e.verb == EditVerb::kMove) j["to"] = {e.to.row, e.to.col};
  return j;
}

AtomicEdit edit_from_json(const json& j) {
  const auto verb = j.at("verb").get<std::string>();
  const auto shape = parse_shape(j.at("shape").get<std::string>());
  const auto cell = cell_from_json(j.at("cell"));
  if (verb == "add") return AtomicEdit::add(shape, parse_color(j.at("color").get<std::string>()), cell);
  if (verb == "remove") return AtomicEdit::remove(shape, cell);
  if (verb == "recolor") return AtomicEdit::recolor(shape, cell, parse_color(j.at("color").get<std::string>()));
  if (verb == "move") return AtomicEdit::move(shape, cell, cell_from_json(j.at("to")));
  throw ValidationError("unknown edit verb '" + verb + "'");
}

void save_dataset(const TripletDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);

  json gallery = json::array();
  std::string bin;
  std::string idx = "# id offset length\n";
  for (const auto& g : ds.gallery) {
    gallery.push_back({{"id", g.id}, {"scene", scene_to_json(g.scene)}});
    const std::size_t offset = bin.size();
    append_f32_le(bin, g.image.pixels.data(), g.image.pixels.size());
    idx += std::to_string(g.id) + " " + std::to_string(offset) + " " + std::to_string(bin.size() - offset) + "\n";
  }

  json triplets = json::array();
  for (std::size_t i = 0; i < ds.triplets.size(); ++i) {
    const auto& t = ds.triplets[i];
    json edits = json::array();
    for (const auto& e : t.edits) edits.push_back(edit_to_json(e));
    triplets.push_back({{"index", i},
                        {"reference", t.reference_id},
                        {"target", t.target_id},
                        {"tokens", t.tokens},
                        {"text", ds.vocabulary.decode(t.tokens)},
                        {"edits", edits},
                        {"group", t.subset_group ? json(*t.subset_group) : json(nullptr)}});
  }

  json groups = json::array();
  for (const auto& [gid, members] : ds.groups) groups.push_back({{"id", gid}, {"members", members}});

  const int res = ds.config.resolution;
  json manifest{{"format", "detailfusion-dataset"},
                {"version", 1},
                {"kind", to_string(ds.kind)},
                {"seed", ds.seed},
                {"count", ds.count},
                {"config", config_to_json(ds.config)},
                {"image", {{"height", res}, {"width", res}, {"channels", 3}, {"dtype", "float32"},
                           {"layout", "HWC"}, {"endianness", "little"}}},
                {"vocabulary", ds.vocabulary.tokens()},
                {"gallery", gallery},
                {"triplets", triplets},
                {"groups", groups}};

  write_file(dir / kManifestFile, manifest.dump(1) + "\n");
  write_file(dir / kGalleryBinFile, bin);
  write_file(dir / kGalleryIdxFile, idx);
}

TripletDataset load_dataset(const fs::path& dir, bool verify_render) {
  json m;
  try {
    m = json::parse(read_file(dir / kManifestFile));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }

  TripletDataset ds;
  try {
    if (m.at("format") != "detailfusion-dataset" || m.at("version") != 1)
      throw ValidationError("unsupported dataset format");
    ds.kind = parse_dataset_kind(m.at("kind").get<std::string>());
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.count = m.at("count").get<int>();
    ds.config = config_from_json(m.at("config"));
    ds.vocabulary = Vocabulary::from_tokens(m.at("vocabulary").get<std::vector<std::string>>());
    for (const auto& t : m.at("triplets")) {
      Triplet tr;
      tr.reference_id = t.at("reference").get<int>();
      tr.target_id = t.at("target").get<int>();
      tr.tokens = t.at("tokens").get<std::vector<int>>();
      for (const auto& e : t.at("edits")) tr.edits.push_back(edit_from_json(e));
      if (!t.at("group").is_null()) tr.subset_group = t.at("group").get<int>();
      ds.triplets.push_back(std::move(tr));
    }
    for (const auto& g : m.at("groups")) ds.groups.emplace(g.at("id").get<int>(), g.at("members").get<std::vector<int>>());

    const std::string bin = read_file(dir / kGalleryBinFile);
    std::istringstream idx(read_file(dir / kGalleryIdxFile));
    std::string line;
    std::getline(idx, line);  // header
    const int res = ds.config.resolution;
    const std::size_t expected = static_cast<std::size_t>(res) * res * Image::kChannels * 4;
    for (const auto& g : m.at("gallery")) {
      GalleryImage gi;
      gi.id = g.at("id").get<int>();
      gi.scene = scene_from_json(g.at("scene"));
      long long id = 0, offset = 0, length = 0;
      if (!(idx >> id >> offset >> length) || id != gi.id)
        throw ValidationError("gallery.idx does not match manifest at id " + std::to_string(gi.id));
      if (static_cast<std::size_t>(length) != expected || static_cast<std::size_t>(offset + length) > bin.size())
        throw ValidationError("gallery.idx entry out of range for id " + std::to_string(gi.id));
      gi.image.height = res;
      gi.image.width = res;
      gi.image.pixels.resize(expected / 4);
      read_f32_le(bin.data() + offset, gi.image.pixels.data(), gi.image.pixels.size());
      if (verify_render && render_scene(gi.scene, res) != gi.image)
        throw ValidationError("stored image " + std::to_string(gi.id) + " differs from its scene rendering");
      ds.gallery.push_back(std::move(gi));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace dfusion
