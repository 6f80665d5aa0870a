#pragma once

#include <cstdint>
#include <vector>

#include "detailfusion/encoders/encoders.hpp"
#include "detailfusion/nn/layers.hpp"

namespace dfusion {

enum class Side { kGlobal, kDetail };

template <typename T>
struct FusedFeature {
  RowVec<T> vector;
  double lambda = 0.5;
};

template <typename T>
struct CompositorLayerCache {
  LayerNormCache<T> ln_q, ln_kv;
  AttentionCache<T> attn;
};

// cls <- cls + Attn(LN(cls), LN(tokens)); output projection starts at zero.
template <typename T>
struct CompositorLayer {
  LayerNorm<T> ln_q, ln_kv;
  MultiHeadAttention<T> attn;

  CompositorLayer() = default;
  CompositorLayer(int dim, int heads, Rng& rng);
  Mat<T> forward(const Mat<T>& cls, const Mat<T>& tokens, const Segments& kv_seg, CompositorLayerCache<T>* c) const;
  // Returns {dL/dcls, dL/dtokens}.
  std::pair<Mat<T>, Mat<T>> backward(const CompositorLayerCache<T>& c, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct CompositorSide {
  std::vector<CompositorLayer<T>> cross;  // M layers over the opposite branch
  std::vector<CompositorLayer<T>> same;   // N layers over the own branch
  Linear<T> projection;                   // projection extraction mode only
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct ExtractTape {
  Mat<T> cls_in;
  std::vector<CompositorLayerCache<T>> cross, same;
};

template <typename T>
struct ComposeTape {
  int batch = 0;
  Segments kv_seg;
  ExtractTape<T> global, detail;
  Mat<T> g, f, h;              // enriched CLS rows and their concatenation
  Mat<T> phi_hidden, psi_hidden;
  Mat<T> lambda;               // B x 1
};

template <typename T>
struct ComposeOutput {
  Mat<T> fused;                // B x d, not normalised
  std::vector<double> lambdas;
};

// Adaptive feature compositor: enriches each branch's CLS token through
// cross-attention to the opposite branch (M layers) and then to its own
// branch (N layers), then fuses the two with a learned convex weight plus a
// bridging feature.
template <typename T>
struct Compositor {
  int dim = 0;
  int tokens = 0;
  ExtractionMode extraction = ExtractionMode::kAttention;
  FusionMode fusion = FusionMode::kPhiPsi;
  CompositorSide<T> global, detail;
  Linear<T> phi_in, phi_out;  // 2d -> hidden -> 1
  Linear<T> psi_in, psi_out;  // 2d -> hidden -> d

  Compositor() = default;
  Compositor(const ModelConfig& cfg, std::uint64_t seed);

  int m() const { return static_cast<int>(global.cross.size()); }
  int n() const { return static_cast<int>(global.same.size()); }

  // Stacked (B * (K + 1)) x d token rows for each side.
  ComposeOutput<T> forward(const Mat<T>& global_tokens, const Mat<T>& detail_tokens, int batch,
                           ComposeTape<T>* tape = nullptr) const;
  // Accumulates parameter gradients; returns {dL/d global_tokens, dL/d detail_tokens}.
  std::pair<Mat<T>, Mat<T>> backward(const ComposeTape<T>& tape, const Mat<T>& d_fused);

  RowVec<T> extract_cls(const TokenFeatures<T>& own, const TokenFeatures<T>& opposite, Side side) const;
  FusedFeature<T> fuse(const RowVec<T>& global_cls, const RowVec<T>& detail_cls) const;
  // Extraction + fusion, unit-normalised.
  FusedFeature<T> compose(const TokenFeatures<T>& global_tokens, const TokenFeatures<T>& detail_tokens) const;

  void collect(ParamList<T>& out);

 private:
  Mat<T> extract(const CompositorSide<T>& side, const Mat<T>& own, const Mat<T>& opposite, const Segments& kv_seg,
                 ExtractTape<T>* tape) const;
  std::pair<Mat<T>, Mat<T>> extract_backward(CompositorSide<T>& side, const ExtractTape<T>& tape,
                                             const Segments& kv_seg, const Mat<T>& dy);
  Mat<T> fuse_rows(const Mat<T>& g, const Mat<T>& f, ComposeTape<T>* tape, std::vector<double>* lambdas) const;
};

}  // namespace dfusion
