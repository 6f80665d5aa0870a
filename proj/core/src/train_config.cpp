#include "detailfusion/training/train_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "detailfusion/common/digest.hpp"
#include "detailfusion/common/errors.hpp"

namespace dfusion {

std::string to_string(SpnTarget t) {
  switch (t) {
    case SpnTarget::kNone: return "none";
    case SpnTarget::kGm: return "gm";
    case SpnTarget::kCompositor: return "compositor";
  }
  return "?";
}

StageSchedule default_schedule(int stage) {
  switch (stage) {
    case 1: return {5, 64};
    case 2: return {30, 32};
    case 3: return {60, 128};
    default: throw ConfigError("stage must be 1, 2 or 3");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void type_error(const std::string& key, const char* expected, const std::string& value) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + value + "'");
}

long long as_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) type_error(key, "an integer", v);
  return out;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) type_error(key, "a non-negative integer", v);
  return out;
}

double as_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) type_error(key, "a number", v);
  return out;
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  type_error(key, "true or false", v);
}

std::string fmt_double(double d) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  return std::string(buf, p);
}

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define DF_INT(name, member)                                                                                   \
  {name,                                                                                                       \
   {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = static_cast<int>(as_int(k, v)); }, \
    [](const TrainConfig& c) { return std::to_string(c.member); }}}
#define DF_DOUBLE(name, member)                                                                            \
  {name,                                                                                                   \
   {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = as_double(k, v); },        \
    [](const TrainConfig& c) { return fmt_double(c.member); }}}
#define DF_BOOL(name, member)                                                                            \
  {name,                                                                                                 \
   {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = as_bool(k, v); },        \
    [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define DF_STRING(name, member)                                                                        \
  {name,                                                                                               \
   {[](TrainConfig& c, const std::string&, const std::string& v) { c.member = v; },                    \
    [](const TrainConfig& c) { return c.member; }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      DF_INT("stage", stage),
      DF_STRING("dataset", dataset),
      DF_STRING("val_dataset", val_dataset),
      DF_STRING("checkpoint_in", checkpoint_in),
      DF_STRING("checkpoint_out", checkpoint_out),
      DF_STRING("loss_trace", loss_trace),
      DF_INT("epochs", epochs),
      DF_INT("batch_size", batch_size),
      DF_INT("max_steps", max_steps),
      DF_DOUBLE("lr", lr),
      DF_DOUBLE("tau", tau),
      DF_DOUBLE("gamma", gamma),
      DF_DOUBLE("beta1", beta1),
      DF_DOUBLE("beta2", beta2),
      DF_DOUBLE("weight_decay", weight_decay),
      {"seed",
       {[](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = as_u64(k, v); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      DF_DOUBLE("val_fraction", val_fraction),
      DF_BOOL("sgn", sgn),
      {"spn_target",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          if (v == "none") c.spn_target = SpnTarget::kNone;
          else if (v == "gm") c.spn_target = SpnTarget::kGm;
          else if (v == "compositor") c.spn_target = SpnTarget::kCompositor;
          else type_error(k, "none, gm or compositor", v);
        },
        [](const TrainConfig& c) { return to_string(c.spn_target); }}},
      DF_BOOL("cache_features", cache_features),
      DF_BOOL("vision_trainable", vision_trainable),
      DF_BOOL("freeze_branches", freeze_branches),
      DF_INT("image_size", model.image_size),
      DF_INT("patch_size", model.patch_size),
      DF_INT("width", model.width),
      DF_INT("feature_dim", model.feature_dim),
      DF_INT("query_tokens", model.query_tokens),
      DF_INT("hybrid_blocks", model.hybrid_blocks),
      DF_INT("heads", model.heads),
      DF_INT("ffn_mult", model.ffn_mult),
      DF_INT("vision_blocks", model.vision_blocks),
      DF_INT("vocab_size", model.vocab_size),
      DF_INT("max_text_len", model.max_text_len),
      DF_INT("compositor_m", model.compositor_m),
      DF_INT("compositor_n", model.compositor_n),
      DF_INT("compositor_heads", model.compositor_heads),
      DF_INT("mlp_mult", model.mlp_mult),
      {"extraction_mode",
       {[](TrainConfig& c, const std::string&, const std::string& v) { c.model.extraction = parse_extraction_mode(v); },
        [](const TrainConfig& c) { return to_string(c.model.extraction); }}},
      {"fusion_mode",
       {[](TrainConfig& c, const std::string&, const std::string& v) { c.model.fusion = parse_fusion_mode(v); },
        [](const TrainConfig& c) { return to_string(c.model.fusion); }}},
  };
  return table;
}

#undef DF_INT
#undef DF_DOUBLE
#undef DF_BOOL
#undef DF_STRING

}  // namespace

void TrainConfig::validate() const {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr: learning rate must be positive");
  if (!(tau > 0.0)) throw ConfigError("tau: temperature must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma: trade-off must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (sgn && stage != 2) throw ConfigError("sgn applies to stage 2 only");
  if (spn_target == SpnTarget::kGm && stage != 2) throw ConfigError("spn_target = gm requires stage = 2");
  if (spn_target == SpnTarget::kCompositor && stage != 3) throw ConfigError("spn_target = compositor requires stage = 3");
  if (stage == 3 && !freeze_branches) throw ConfigError("stage 3 trains the compositor only; branches cannot be unfrozen");
  model.validate();
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

std::string TrainConfig::digest() const { return sha256_hex(std::string_view(to_text())); }

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!fields().count(key)) throw ConfigError("unknown key '" + key + "' on line " + std::to_string(lineno));
    if (!values.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'");
  }
  // Stage first, so its schedule defaults can be overridden.
  if (auto it = values.find("stage"); it != values.end()) fields().at("stage").set(c, "stage", it->second);
  if (c.stage >= 1 && c.stage <= 3) {
    const StageSchedule s = default_schedule(c.stage);
    c.epochs = s.epochs;
    c.batch_size = s.batch_size;
  }
  for (const auto& [key, value] : values)
    if (key != "stage") fields().at(key).set(c, key, value);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

}  // namespace dfusion
