#include "detailfusion/training/model.hpp"

#include "detailfusion/common/digest.hpp"
#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/dataset_io.hpp"

namespace dfusion {

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kVision: return "vision";
    case ParamGroup::kDiEncoder: return "di_encoder";
    case ParamGroup::kDiLinearH: return "di_linear_h";
    case ParamGroup::kDiLinearI: return "di_linear_i";
    case ParamGroup::kGmEncoder: return "gm_encoder";
    case ParamGroup::kGmLinearH: return "gm_linear_h";
    case ParamGroup::kCompositor: return "compositor";
  }
  return "?";
}

ParamGroup parse_param_group(std::string_view s) {
  for (ParamGroup g : kAllParamGroups)
    if (to_string(g) == s) return g;
  throw ValidationError("unknown parameter group '" + std::string(s) + "'");
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg), encoder(cfg, seed), compositor(cfg, seed) {
  set_frozen(ParamGroup::kVision, true);
}

ParamList<float> Model::params(ParamGroup g) {
  ParamList<float> out;
  switch (g) {
    case ParamGroup::kVision: encoder.vision.collect("vision", out); break;
    case ParamGroup::kDiEncoder: encoder.di_encoder.collect("di_encoder", out); break;
    case ParamGroup::kDiLinearH: encoder.di_linear_h.collect("di_linear_h", out); break;
    case ParamGroup::kDiLinearI: encoder.di_linear_i.collect("di_linear_i", out); break;
    case ParamGroup::kGmEncoder: encoder.gm_encoder.collect("gm_encoder", out); break;
    case ParamGroup::kGmLinearH: encoder.gm_linear_h.collect("gm_linear_h", out); break;
    case ParamGroup::kCompositor: compositor.collect(out); break;
  }
  return out;
}

ParamList<float> Model::params() {
  ParamList<float> out;
  for (ParamGroup g : kAllParamGroups) {
    auto p = params(g);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

ParamList<float> Model::trainable() {
  ParamList<float> out;
  for (ParamGroup g : kAllParamGroups) {
    if (is_frozen(g)) continue;
    auto p = params(g);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void Model::zero_grad() {
  for (auto& p : params()) p.param->zero_grad();
}

std::string Model::group_digest(ParamGroup g) const {
  std::string bytes;
  for (const auto& p : const_cast<Model*>(this)->params(g)) {
    bytes += p.name;
    bytes += '\0';
    bytes += std::to_string(p.param->value.rows()) + "x" + std::to_string(p.param->value.cols()) + '\0';
    append_f32_le(bytes, p.param->value.data(), static_cast<std::size_t>(p.param->value.size()));
  }
  return sha256_hex(std::string_view(bytes));
}

}  // namespace dfusion
