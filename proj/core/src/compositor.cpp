#include "detailfusion/compositor/compositor.hpp"

#include <cmath>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

template <typename T>
CompositorLayer<T>::CompositorLayer(int dim, int heads, Rng& rng)
    : ln_q(dim), ln_kv(dim), attn(dim, heads, rng, /*zero_output=*/true) {}

template <typename T>
Mat<T> CompositorLayer<T>::forward(const Mat<T>& cls, const Mat<T>& tokens, const Segments& kv_seg,
                                   CompositorLayerCache<T>* c) const {
  Mat<T> a = ln_q.forward(cls, c ? &c->ln_q : nullptr);
  Mat<T> kv = ln_kv.forward(tokens, c ? &c->ln_kv : nullptr);
  const Segments q_seg = uniform_segments(static_cast<int>(cls.rows()), 1);
  return cls + attn.forward(a, q_seg, kv, kv_seg, c ? &c->attn : nullptr);
}

template <typename T>
std::pair<Mat<T>, Mat<T>> CompositorLayer<T>::backward(const CompositorLayerCache<T>& c, const Mat<T>& dy) {
  auto [da, dkv] = attn.backward(c.attn, dy);
  Mat<T> dcls = dy + ln_q.backward(c.ln_q, da);
  return {std::move(dcls), ln_kv.backward(c.ln_kv, dkv)};
}

template <typename T>
void CompositorLayer<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln_q.collect(prefix + ".ln_q", out);
  ln_kv.collect(prefix + ".ln_kv", out);
  attn.collect(prefix + ".attn", out);
}

template <typename T>
void CompositorSide<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < cross.size(); ++i) cross[i].collect(prefix + ".cross" + std::to_string(i), out);
  for (std::size_t i = 0; i < same.size(); ++i) same[i].collect(prefix + ".same" + std::to_string(i), out);
  if (projection.weight.value.size() > 0) projection.collect(prefix + ".projection", out);
}

template <typename T>
Compositor<T>::Compositor(const ModelConfig& cfg, std::uint64_t seed)
    : dim(cfg.feature_dim), tokens(cfg.num_tokens()), extraction(cfg.extraction), fusion(cfg.fusion) {
  cfg.validate();
  Rng rng = Rng::substream(seed, "init.compositor", 0);
  for (CompositorSide<T>* side : {&global, &detail}) {
    if (extraction == ExtractionMode::kAttention) {
      for (int i = 0; i < cfg.compositor_m; ++i) side->cross.emplace_back(dim, cfg.compositor_heads, rng);
      for (int i = 0; i < cfg.compositor_n; ++i) side->same.emplace_back(dim, cfg.compositor_heads, rng);
    } else if (extraction == ExtractionMode::kProjection) {
      side->projection = Linear<T>(dim, dim, rng);
      side->projection.weight.value.setIdentity();
    }
  }
  const int hidden = cfg.mlp_mult * dim;
  phi_in = Linear<T>(2 * dim, hidden, rng);
  phi_out = Linear<T>(hidden, 1, rng);
  psi_in = Linear<T>(2 * dim, hidden, rng);
  psi_out = Linear<T>(hidden, dim, rng);
}

template <typename T>
Mat<T> Compositor<T>::extract(const CompositorSide<T>& side, const Mat<T>& own, const Mat<T>& opposite,
                              const Segments& kv_seg, ExtractTape<T>* tape) const {
  const auto batch = static_cast<Eigen::Index>(kv_seg.size() - 1);
  Mat<T> cls(batch, dim);
  for (Eigen::Index b = 0; b < batch; ++b) cls.row(b) = own.row(b * tokens);
  if (tape) {
    tape->cls_in = cls;
    tape->cross.resize(side.cross.size());
    tape->same.resize(side.same.size());
  }
  switch (extraction) {
    case ExtractionMode::kConcat:
      return cls;
    case ExtractionMode::kProjection:
      return side.projection.forward(cls);
    case ExtractionMode::kAttention:
      break;
  }
  for (std::size_t i = 0; i < side.cross.size(); ++i)
    cls = side.cross[i].forward(cls, opposite, kv_seg, tape ? &tape->cross[i] : nullptr);
  for (std::size_t i = 0; i < side.same.size(); ++i)
    cls = side.same[i].forward(cls, own, kv_seg, tape ? &tape->same[i] : nullptr);
  return cls;
}

template <typename T>
std::pair<Mat<T>, Mat<T>> Compositor<T>::extract_backward(CompositorSide<T>& side, const ExtractTape<T>& tape,
                                                          const Segments& kv_seg, const Mat<T>& dy) {
  const auto batch = static_cast<Eigen::Index>(kv_seg.size() - 1);
  Mat<T> d_own = Mat<T>::Zero(batch * tokens, dim);
  Mat<T> d_opp = Mat<T>::Zero(batch * tokens, dim);
  Mat<T> dcls = dy;
  if (extraction == ExtractionMode::kProjection) {
    dcls = side.projection.backward(tape.cls_in, dy);
  } else if (extraction == ExtractionMode::kAttention) {
    for (std::size_t i = side.same.size(); i-- > 0;) {
      auto [dc, dt] = side.same[i].backward(tape.same[i], dcls);
      dcls = std::move(dc);
      d_own += dt;
    }
    for (std::size_t i = side.cross.size(); i-- > 0;) {
      auto [dc, dt] = side.cross[i].backward(tape.cross[i], dcls);
      dcls = std::move(dc);
      d_opp += dt;
    }
  }
  for (Eigen::Index b = 0; b < batch; ++b) d_own.row(b * tokens) += dcls.row(b);
  return {std::move(d_own), std::move(d_opp)};
}

template <typename T>
Mat<T> Compositor<T>::fuse_rows(const Mat<T>& g, const Mat<T>& f, ComposeTape<T>* tape,
                                std::vector<double>* lambdas) const {
  const auto batch = g.rows();
  if (g.cols() != dim || f.cols() != dim || f.rows() != batch) throw ShapeError("fusion inputs must be B x d");
  Mat<T> h(batch, 2 * dim);
  h.leftCols(dim) = g;
  h.rightCols(dim) = f;
  Mat<T> out;
  Mat<T> lambda = Mat<T>::Constant(batch, 1, T(0.5));
  if (fusion == FusionMode::kAverage) {
    out = (g + f) * T(0.5);
  } else {
    out = Mat<T>::Zero(batch, dim);
    if (fusion == FusionMode::kPhiPsi || fusion == FusionMode::kPhiOnly) {
      Mat<T> hid = phi_in.forward(h);
      Mat<T> z = phi_out.forward(relu(hid));
      lambda = z.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
      for (Eigen::Index b = 0; b < batch; ++b) out.row(b) = lambda(b, 0) * g.row(b) + (T(1) - lambda(b, 0)) * f.row(b);
      if (tape) tape->phi_hidden = std::move(hid);
    }
    if (fusion == FusionMode::kPhiPsi || fusion == FusionMode::kPsiOnly) {
      Mat<T> hid = psi_in.forward(h);
      out += psi_out.forward(relu(hid));
      if (tape) tape->psi_hidden = std::move(hid);
    }
  }
  if (!out.allFinite()) throw NumericError("non-finite fused feature");
  if (lambdas) {
    lambdas->resize(static_cast<std::size_t>(batch));
    for (Eigen::Index b = 0; b < batch; ++b) (*lambdas)[static_cast<std::size_t>(b)] = static_cast<double>(lambda(b, 0));
  }
  if (tape) {
    tape->g = g;
    tape->f = f;
    tape->h = std::move(h);
    tape->lambda = std::move(lambda);
  }
  return out;
}

template <typename T>
ComposeOutput<T> Compositor<T>::forward(const Mat<T>& global_tokens, const Mat<T>& detail_tokens, int batch,
                                        ComposeTape<T>* tape) const {
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * tokens;
  if (global_tokens.rows() != rows || detail_tokens.rows() != rows || global_tokens.cols() != dim ||
      detail_tokens.cols() != dim)
    throw ShapeError("compositor inputs must be (B * " + std::to_string(tokens) + ") x " + std::to_string(dim));
  const Segments kv_seg = uniform_segments(batch, tokens);
  if (tape) {
    tape->batch = batch;
    tape->kv_seg = kv_seg;
  }
  Mat<T> g = extract(global, global_tokens, detail_tokens, kv_seg, tape ? &tape->global : nullptr);
  Mat<T> f = extract(detail, detail_tokens, global_tokens, kv_seg, tape ? &tape->detail : nullptr);
  ComposeOutput<T> out;
  out.fused = fuse_rows(g, f, tape, &out.lambdas);
  return out;
}

template <typename T>
std::pair<Mat<T>, Mat<T>> Compositor<T>::backward(const ComposeTape<T>& tape, const Mat<T>& d_fused) {
  const auto batch = tape.g.rows();
  Mat<T> dg, df;
  Mat<T> dh = Mat<T>::Zero(batch, 2 * dim);
  if (fusion == FusionMode::kAverage) {
    dg = d_fused * T(0.5);
    df = dg;
  } else {
    dg = Mat<T>::Zero(batch, dim);
    df = Mat<T>::Zero(batch, dim);
    if (fusion == FusionMode::kPhiPsi || fusion == FusionMode::kPhiOnly) {
      Mat<T> dz(batch, 1);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const T l = tape.lambda(b, 0);
        dg.row(b) += l * d_fused.row(b);
        df.row(b) += (T(1) - l) * d_fused.row(b);
        const T dl = d_fused.row(b).dot(tape.g.row(b) - tape.f.row(b));
        dz(b, 0) = dl * l * (T(1) - l);
      }
      const Mat<T> act = relu(tape.phi_hidden);
      Mat<T> dact = phi_out.backward(act, dz);
      dh += phi_in.backward(tape.h, relu_backward(tape.phi_hidden, dact));
    }
    if (fusion == FusionMode::kPhiPsi || fusion == FusionMode::kPsiOnly) {
      const Mat<T> act = relu(tape.psi_hidden);
      Mat<T> dact = psi_out.backward(act, d_fused);
      dh += psi_in.backward(tape.h, relu_backward(tape.psi_hidden, dact));
    }
    dg += dh.leftCols(dim);
    df += dh.rightCols(dim);
  }
  auto [dg_own, dg_opp] = extract_backward(global, tape.global, tape.kv_seg, dg);
  auto [df_own, df_opp] = extract_backward(detail, tape.detail, tape.kv_seg, df);
  return {dg_own + df_opp, df_own + dg_opp};
}

template <typename T>
RowVec<T> Compositor<T>::extract_cls(const TokenFeatures<T>& own, const TokenFeatures<T>& opposite, Side side) const {
  if (own.tokens.rows() != tokens || opposite.tokens.rows() != tokens || own.tokens.cols() != dim ||
      opposite.tokens.cols() != dim)
    throw ShapeError("extract_cls expects " + std::to_string(tokens) + " x " + std::to_string(dim) + " token sets");
  const auto& s = side == Side::kGlobal ? global : detail;
  return extract(s, own.tokens, opposite.tokens, uniform_segments(1, tokens), nullptr).row(0);
}

template <typename T>
FusedFeature<T> Compositor<T>::fuse(const RowVec<T>& global_cls, const RowVec<T>& detail_cls) const {
  std::vector<double> lambdas;
  FusedFeature<T> out;
  out.vector = fuse_rows(Mat<T>(global_cls), Mat<T>(detail_cls), nullptr, &lambdas).row(0);
  out.lambda = lambdas[0];
  return out;
}

template <typename T>
FusedFeature<T> Compositor<T>::compose(const TokenFeatures<T>& global_tokens,
                                       const TokenFeatures<T>& detail_tokens) const {
  ComposeOutput<T> o = forward(global_tokens.tokens, detail_tokens.tokens, 1);
  FusedFeature<T> out;
  out.vector = l2_normalize_rows(o.fused).row(0);
  out.lambda = o.lambdas[0];
  return out;
}

template <typename T>
void Compositor<T>::collect(ParamList<T>& out) {
  global.collect("compositor.global", out);
  detail.collect("compositor.detail", out);
  if (fusion == FusionMode::kPhiPsi || fusion == FusionMode::kPhiOnly) {
    phi_in.collect("compositor.phi_in", out);
    phi_out.collect("compositor.phi_out", out);
  }
  if (fusion == FusionMode::kPhiPsi || fusion == FusionMode::kPsiOnly) {
    psi_in.collect("compositor.psi_in", out);
    psi_out.collect("compositor.psi_out", out);
  }
}

template struct CompositorLayer<float>;
template struct CompositorLayer<double>;
template struct CompositorSide<float>;
template struct CompositorSide<double>;
template struct Compositor<float>;
template struct Compositor<double>;

}  // namespace dfusion
