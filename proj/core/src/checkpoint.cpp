#include "detailfusion/training/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/dataset_io.hpp"

namespace dfusion {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'C', 'K', 'P', 'T', '\r', '\n'};

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_str() { return get_bytes(get<std::uint32_t>()); }
  const char* here(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json meta_json(const Checkpoint& c) {
  return {{"format", "dfusion-checkpoint"},
          {"model", c.model.config.to_json()},
          {"stage", c.meta.stage},
          {"seed", c.meta.seed},
          {"config_digest", c.meta.config_digest},
          {"history", c.meta.history},
          {"rng", c.meta.rng}};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = meta_json(ckpt).dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;

  put<std::uint32_t>(out, kNumParamGroups);
  for (ParamGroup g : kAllParamGroups) {
    put_str(out, to_string(g));
    put<std::uint8_t>(out, ckpt.model.is_frozen(g) ? 1 : 0);
  }
  auto& model = const_cast<Model&>(ckpt.model);
  std::uint32_t count = 0;
  for (ParamGroup g : kAllParamGroups) count += static_cast<std::uint32_t>(model.params(g).size());
  put<std::uint32_t>(out, count);
  for (std::size_t gi = 0; gi < kNumParamGroups; ++gi) {
    for (const auto& p : model.params(kAllParamGroups[gi])) {
      put_str(out, p.name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(gi));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(p.param->value.rows()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(p.param->value.cols()));
      append_f32_le(out, p.param->value.data(), static_cast<std::size_t>(p.param->value.size()));
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw IoError("not a dfusion checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.get_bytes(r.get<std::uint64_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
  }

  Checkpoint c;
  try {
    const ModelConfig cfg = ModelConfig::from_json(meta.at("model"));
    c.meta.stage = meta.at("stage").get<int>();
    c.meta.seed = meta.at("seed").get<std::uint64_t>();
    c.meta.config_digest = meta.at("config_digest").get<std::string>();
    c.meta.history = meta.at("history");
    c.meta.rng = meta.at("rng");
    c.model = Model(cfg, c.meta.seed);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
  }

  const auto groups = r.get<std::uint32_t>();
  if (groups != kNumParamGroups) throw IoError("checkpoint has an unexpected group table");
  for (std::size_t gi = 0; gi < kNumParamGroups; ++gi) {
    const std::string name = r.get_str();
    if (name != to_string(kAllParamGroups[gi])) throw IoError("checkpoint group '" + name + "' out of order");
    c.model.set_frozen(kAllParamGroups[gi], r.get<std::uint8_t>() != 0);
  }

  std::map<std::string, Param<float>*> by_name;
  for (auto& p : c.model.params()) by_name[p.name] = p.param;
  const auto count = r.get<std::uint32_t>();
  if (count != by_name.size())
    throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, model expects " + std::to_string(by_name.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_str();
    r.get<std::uint32_t>();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("unexpected tensor '" + name + "' in checkpoint");
    Param<float>& p = *it->second;
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw ShapeError("tensor '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) + ", config expects " +
                       std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    read_f32_le(r.here(n * 4), p.value.data(), n);
    p.zero_grad();
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dfusion
