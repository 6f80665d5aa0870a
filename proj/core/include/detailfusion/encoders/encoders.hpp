#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "detailfusion/data/scene.hpp"
#include "detailfusion/encoders/model_config.hpp"
#include "detailfusion/nn/layers.hpp"

namespace dfusion {

// (K + 1) x d token features; row 0 is the CLS-role token used for retrieval.
template <typename T>
struct TokenFeatures {
  Mat<T> tokens;
  bool normalized = false;

  RowVec<T> cls() const { return tokens.row(0); }
  // Rescales token 0 to unit L2 norm.
  void normalize_cls();
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Image -> P x (patch*patch*3) rows in raster order of patches.
template <typename T>
Mat<T> patchify(const Image& image, int image_size, int patch_size);

template <typename T>
struct VisionBlockCache {
  LayerNormCache<T> ln1, ln2;
  AttentionCache<T> attn;
  Mat<T> fc_in, fc_hidden, fc_act;
};

template <typename T>
struct VisionBlock {
  LayerNorm<T> ln1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> ln2;
  Linear<T> fc1, fc2;

  VisionBlock() = default;
  VisionBlock(int width, int heads, int ffn_mult, Rng& rng);
  Mat<T> forward(const Mat<T>& x, const Segments& seg, VisionBlockCache<T>* c) const;
  Mat<T> backward(const VisionBlockCache<T>& c, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct VisionTape {
  Mat<T> patches;
  Segments seg;
  std::vector<VisionBlockCache<T>> blocks;
  LayerNormCache<T> final_ln;
};

// Patch embedding + positional encoding + optional self-attention blocks.
template <typename T>
struct VisionEncoder {
  Linear<T> patch_embed;
  Param<T> pos_embed;  // P x width
  std::vector<VisionBlock<T>> blocks;
  LayerNorm<T> final_ln;

  VisionEncoder() = default;
  VisionEncoder(const ModelConfig& cfg, Rng& rng);
  // patches: (B * P) x patch_dim -> (B * P) x width
  Mat<T> forward(const Mat<T>& patches, int batch, VisionTape<T>* tape) const;
  void backward(const VisionTape<T>& tape, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct HybridBlockCache {
  LayerNormCache<T> ln_query, ln_context, ln_self, ln_ffn;
  AttentionCache<T> cross, self;
  Mat<T> ffn_in, ffn_hidden, ffn_act;
};

// Pre-norm block: cross-attention from the query tokens into the context
// (image patches + text embeddings), then self-attention, then feed-forward.
template <typename T>
struct HybridBlock {
  LayerNorm<T> ln_query, ln_context;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> ln_self;
  MultiHeadAttention<T> self_attn;
  LayerNorm<T> ln_ffn;
  Linear<T> ffn_in, ffn_out;

  HybridBlock() = default;
  HybridBlock(int width, int heads, int ffn_mult, Rng& rng);
  Mat<T> forward(const Mat<T>& q, const Segments& q_seg, const Mat<T>& ctx, const Segments& ctx_seg,
                 HybridBlockCache<T>* c) const;
  // Returns {dL/dq, dL/dctx}.
  std::pair<Mat<T>, Mat<T>> backward(const HybridBlockCache<T>& c, const Mat<T>& dq);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct HybridTape {
  int batch = 0;
  int num_patches = 0;
  Segments q_seg, ctx_seg;
  std::vector<std::vector<int>> texts;
  std::vector<HybridBlockCache<T>> blocks;
  LayerNormCache<T> final_ln;
  Mat<T> output;  // final-LN output, input of the mapping layer
};

// Learnable query tokens + text embedding + L hybrid blocks (E_H).
template <typename T>
struct HybridEncoder {
  Param<T> query_tokens;  // (K + 1) x width
  Param<T> token_embed;   // vocab x width
  Param<T> text_pos;      // max_text_len x width
  std::vector<HybridBlock<T>> blocks;
  LayerNorm<T> final_ln;

  HybridEncoder() = default;
  HybridEncoder(const ModelConfig& cfg, Rng& rng);
  // vision_feats: (B * P) x width. `texts` empty means image-only encoding.
  Mat<T> forward(const Mat<T>& vision_feats, int num_patches, const std::vector<std::vector<int>>& texts, int batch,
                 HybridTape<T>* tape) const;
  // Returns dL/d vision_feats.
  Mat<T> backward(const HybridTape<T>& tape, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct EncodeTape {
  HybridTape<T> hybrid;
  Branch branch = Branch::kDI;
  bool image_only = false;
};

// Shared frozen vision encoder, the DI branch (which also encodes gallery
// images through Linear_I) and the non-shared GM branch.
template <typename T>
struct DualEncoder {
  ModelConfig config;
  VisionEncoder<T> vision;
  HybridEncoder<T> di_encoder;
  Linear<T> di_linear_h;
  Linear<T> di_linear_i;
  HybridEncoder<T> gm_encoder;
  Linear<T> gm_linear_h;

  DualEncoder() = default;
  DualEncoder(const ModelConfig& cfg, std::uint64_t seed);

  // Stacked vision features for a batch of images: (B * P) x width.
  Mat<T> vision_encode(const std::vector<const Image*>& images, VisionTape<T>* tape = nullptr) const;
  Mat<T> vision_encode(const Image& image) const { return vision_encode(std::vector<const Image*>{&image}); }

  // D(Q) or G(Q) for a batch: (B * (K + 1)) x d.
  Mat<T> encode_queries(Branch branch, const Mat<T>& vision_feats, const std::vector<std::vector<int>>& texts,
                        EncodeTape<T>* tape = nullptr) const;
  // D(I) for a batch: (B * (K + 1)) x d.
  Mat<T> encode_images(const Mat<T>& vision_feats, int batch, EncodeTape<T>* tape = nullptr) const;
  // Backprop through an encode_* call; returns dL/d vision_feats.
  Mat<T> backward(const EncodeTape<T>& tape, const Mat<T>& d_tokens);

  TokenFeatures<T> encode_query(const Image& reference, const std::vector<int>& tokens, Branch branch,
                                bool normalize = true) const;
  TokenFeatures<T> encode_image(const Image& image, bool normalize = true) const;

  void validate_tokens(const std::vector<int>& tokens) const;
  void collect(ParamList<T>& out);
};

}  // namespace dfusion
