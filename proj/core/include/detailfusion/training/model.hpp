#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "detailfusion/compositor/compositor.hpp"
#include "detailfusion/encoders/encoders.hpp"

namespace dfusion {

enum class ParamGroup { kVision, kDiEncoder, kDiLinearH, kDiLinearI, kGmEncoder, kGmLinearH, kCompositor };
inline constexpr std::size_t kNumParamGroups = 7;
inline constexpr std::array<ParamGroup, kNumParamGroups> kAllParamGroups = {
    ParamGroup::kVision,    ParamGroup::kDiEncoder, ParamGroup::kDiLinearH, ParamGroup::kDiLinearI,
    ParamGroup::kGmEncoder, ParamGroup::kGmLinearH, ParamGroup::kCompositor};

std::string to_string(ParamGroup g);
ParamGroup parse_param_group(std::string_view s);

// Full trainable state: shared vision encoder, both branches, compositor.
struct Model {
  ModelConfig config;
  DualEncoder<float> encoder;
  Compositor<float> compositor;
  std::array<bool, kNumParamGroups> frozen{};

  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ParamList<float> params(ParamGroup g);
  ParamList<float> params();
  // Unfrozen parameters only.
  ParamList<float> trainable();
  void zero_grad();
  void set_frozen(ParamGroup g, bool value) { frozen[static_cast<std::size_t>(g)] = value; }
  bool is_frozen(ParamGroup g) const { return frozen[static_cast<std::size_t>(g)]; }

  // SHA-256 over names, shapes and float32 payloads of one group.
  std::string group_digest(ParamGroup g) const;
};

}  // namespace dfusion
