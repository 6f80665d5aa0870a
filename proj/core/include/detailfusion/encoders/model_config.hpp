#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace dfusion {

enum class Branch { kDI, kGM };
std::string to_string(Branch b);
// Throws UsageError for anything other than "di" / "gm".
Branch parse_branch(const std::string& s);

// Ablation variants of the compositor's two blocks.
enum class ExtractionMode { kAttention, kConcat, kProjection };
enum class FusionMode { kPhiPsi, kPhiOnly, kPsiOnly, kAverage };
std::string to_string(ExtractionMode m);
std::string to_string(FusionMode m);
ExtractionMode parse_extraction_mode(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int width = 64;          // hybrid encoder model width
  int feature_dim = 64;    // d, output of the mapping layers
  int query_tokens = 8;    // K; the encoder emits K + 1 tokens, index 0 is the CLS-role token
  int hybrid_blocks = 2;   // L
  int heads = 4;
  int ffn_mult = 4;
  int vision_blocks = 0;
  int vocab_size = 34;
  int max_text_len = 32;

  int compositor_m = 2;    // cross-side layers per side
  int compositor_n = 2;    // same-side layers per side
  int compositor_heads = 4;
  int mlp_mult = 4;        // hidden width of MLP_phi / MLP_psi = mlp_mult * d
  ExtractionMode extraction = ExtractionMode::kAttention;
  FusionMode fusion = FusionMode::kPhiPsi;

  int num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int num_tokens() const { return query_tokens + 1; }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace dfusion
