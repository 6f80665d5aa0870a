#pragma once

#include <vector>

#include "detailfusion/common/rng.hpp"
#include "detailfusion/data/scene.hpp"
#include "detailfusion/encoders/model_config.hpp"

namespace dfusion::testing {

// Small model used by gradient checks: fast in 64-bit, every component present.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.width = 16;
  c.feature_dim = 12;
  c.query_tokens = 3;
  c.hybrid_blocks = 2;
  c.heads = 2;
  c.ffn_mult = 2;
  c.vision_blocks = 1;
  c.max_text_len = 8;
  c.compositor_heads = 2;
  c.mlp_mult = 2;
  return c;
}

inline Image random_image(Rng& rng, int size) {
  Image img;
  img.height = img.width = size;
  img.pixels.resize(static_cast<std::size_t>(size) * size * Image::kChannels);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

inline std::vector<int> random_tokens(Rng& rng, int vocab, int max_len) {
  std::vector<int> t(static_cast<std::size_t>(rng.range(0, max_len)));
  for (int& v : t) v = rng.range(0, vocab - 1);
  return t;
}

}  // namespace dfusion::testing
