#include "detailfusion/encoders/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

// ---------------------------------------------------------------- config

std::string to_string(Branch b) { return b == Branch::kDI ? "di" : "gm"; }

Branch parse_branch(const std::string& s) {
  if (s == "di" || s == "DI") return Branch::kDI;
  if (s == "gm" || s == "GM") return Branch::kGM;
  throw UsageError("unknown branch tag '" + s + "' (expected di or gm)");
}

std::string to_string(ExtractionMode m) {
  switch (m) {
    case ExtractionMode::kAttention: return "attention";
    case ExtractionMode::kConcat: return "concat";
    case ExtractionMode::kProjection: return "projection";
  }
  return "?";
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kPhiPsi: return "phi_psi";
    case FusionMode::kPhiOnly: return "phi_only";
    case FusionMode::kPsiOnly: return "psi_only";
    case FusionMode::kAverage: return "average";
  }
  return "?";
}

ExtractionMode parse_extraction_mode(const std::string& s) {
  if (s == "attention") return ExtractionMode::kAttention;
  if (s == "concat") return ExtractionMode::kConcat;
  if (s == "projection") return ExtractionMode::kProjection;
  throw ConfigError("unknown extraction mode '" + s + "'");
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "phi_psi") return FusionMode::kPhiPsi;
  if (s == "phi_only") return FusionMode::kPhiOnly;
  if (s == "psi_only") return FusionMode::kPsiOnly;
  if (s == "average") return FusionMode::kAverage;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw ConfigError("image_size must be a positive multiple of patch_size");
  if (width <= 0 || feature_dim <= 0) throw ConfigError("width and feature_dim must be positive");
  if (heads <= 0 || width % heads != 0) throw ConfigError("width must be divisible by heads");
  if (compositor_heads <= 0 || feature_dim % compositor_heads != 0)
    throw ConfigError("feature_dim must be divisible by compositor_heads");
  if (query_tokens < 0 || hybrid_blocks < 0 || vision_blocks < 0) throw ConfigError("negative layer count");
  if (ffn_mult <= 0 || mlp_mult <= 0) throw ConfigError("hidden multipliers must be positive");
  if (vocab_size <= 0 || max_text_len <= 0) throw ConfigError("vocabulary and text length must be positive");
  if (compositor_m < 0 || compositor_n < 0) throw ConfigError("compositor layer counts must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_size", image_size},
          {"patch_size", patch_size},
          {"width", width},
          {"feature_dim", feature_dim},
          {"query_tokens", query_tokens},
          {"hybrid_blocks", hybrid_blocks},
          {"heads", heads},
          {"ffn_mult", ffn_mult},
          {"vision_blocks", vision_blocks},
          {"vocab_size", vocab_size},
          {"max_text_len", max_text_len},
          {"compositor_m", compositor_m},
          {"compositor_n", compositor_n},
          {"compositor_heads", compositor_heads},
          {"mlp_mult", mlp_mult},
          {"extraction", to_string(extraction)},
          {"fusion", to_string(fusion)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.width = j.at("width").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.query_tokens = j.at("query_tokens").get<int>();
  c.hybrid_blocks = j.at("hybrid_blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.vision_blocks = j.at("vision_blocks").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_text_len = j.at("max_text_len").get<int>();
  c.compositor_m = j.at("compositor_m").get<int>();
  c.compositor_n = j.at("compositor_n").get<int>();
  c.compositor_heads = j.at("compositor_heads").get<int>();
  c.mlp_mult = j.at("mlp_mult").get<int>();
  c.extraction = parse_extraction_mode(j.at("extraction").get<std::string>());
  c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  c.validate();
  return c;
}

// ---------------------------------------------------------------- helpers

template <typename T>
void TokenFeatures<T>::normalize_cls() {
  const T n = tokens.row(0).norm();
  if (!(n > T(0))) throw NumericError("CLS token has zero norm");
  tokens.row(0) /= n;
  normalized = true;
}

namespace {
template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity on vectors of different length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine_similarity of a zero-norm vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}
}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }
double cosine_similarity(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }

template <typename T>
Mat<T> patchify(const Image& image, int image_size, int patch_size) {
  if (image.height != image_size || image.width != image_size)
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", encoder expects " + std::to_string(image_size) + "x" + std::to_string(image_size));
  const int per_side = image_size / patch_size;
  Mat<T> out(per_side * per_side, patch_size * patch_size * Image::kChannels);
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      const int row = pr * per_side + pc;
      int col = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int ch = 0; ch < Image::kChannels; ++ch)
            out(row, col++) = static_cast<T>(image.at(pr * patch_size + y, pc * patch_size + x, ch));
    }
  }
  return out;
}

// ---------------------------------------------------------------- vision

template <typename T>
VisionBlock<T>::VisionBlock(int width, int heads, int ffn_mult, Rng& rng)
    : ln1(width), attn(width, heads, rng), ln2(width), fc1(width, width * ffn_mult, rng), fc2(width * ffn_mult, width, rng) {}

template <typename T>
Mat<T> VisionBlock<T>::forward(const Mat<T>& x, const Segments& seg, VisionBlockCache<T>* c) const {
  Mat<T> a = ln1.forward(x, c ? &c->ln1 : nullptr);
  Mat<T> h = x + attn.forward(a, seg, a, seg, c ? &c->attn : nullptr);
  Mat<T> f = ln2.forward(h, c ? &c->ln2 : nullptr);
  Mat<T> hid = fc1.forward(f);
  Mat<T> act = gelu(hid);
  Mat<T> y = h + fc2.forward(act);
  if (c) {
    c->fc_in = std::move(f);
    c->fc_hidden = std::move(hid);
    c->fc_act = std::move(act);
  }
  return y;
}

template <typename T>
Mat<T> VisionBlock<T>::backward(const VisionBlockCache<T>& c, const Mat<T>& dy) {
  Mat<T> dh = dy;
  Mat<T> dact = fc2.backward(c.fc_act, dy);
  Mat<T> dhid = gelu_backward(c.fc_hidden, dact);
  dh += ln2.backward(c.ln2, fc1.backward(c.fc_in, dhid));
  auto [dq, dkv] = attn.backward(c.attn, dh);
  Mat<T> dx = dh + ln1.backward(c.ln1, dq + dkv);
  return dx;
}

template <typename T>
void VisionBlock<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln1.collect(prefix + ".ln1", out);
  attn.collect(prefix + ".attn", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

template <typename T>
VisionEncoder<T>::VisionEncoder(const ModelConfig& cfg, Rng& rng)
    : patch_embed(cfg.patch_dim(), cfg.width, rng), final_ln(cfg.width) {
  // Fixed-pattern 2-D sinusoidal initialisation so patch position survives
  // the frozen random projection: first half of the channels encodes the
  // patch row, second half the column.
  const int per_side = cfg.image_size / cfg.patch_size;
  pos_embed.resize(cfg.num_patches(), cfg.width);
  const int half = cfg.width / 2;
  for (int p = 0; p < cfg.num_patches(); ++p) {
    const int coords[2] = {p / per_side, p % per_side};
    for (int part = 0; part < 2; ++part) {
      for (int j = 0; j + 1 < half; j += 2) {
        const double freq = std::pow(100.0, -static_cast<double>(j) / half);
        pos_embed.value(p, part * half + j) = static_cast<T>(0.25 * std::sin(coords[part] * freq));
        pos_embed.value(p, part * half + j + 1) = static_cast<T>(0.25 * std::cos(coords[part] * freq));
      }
    }
  }
  for (int b = 0; b < cfg.vision_blocks; ++b) blocks.emplace_back(cfg.width, cfg.heads, cfg.ffn_mult, rng);
}

template <typename T>
Mat<T> VisionEncoder<T>::forward(const Mat<T>& patches, int batch, VisionTape<T>* tape) const {
  const auto P = pos_embed.value.rows();
  if (patches.rows() != batch * P) throw ShapeError("patch rows do not match batch");
  Mat<T> x = patch_embed.forward(patches);
  for (int b = 0; b < batch; ++b) x.block(b * P, 0, P, x.cols()) += pos_embed.value;
  Segments seg = uniform_segments(batch, static_cast<int>(P));
  if (tape) {
    tape->patches = patches;
    tape->seg = seg;
    tape->blocks.resize(blocks.size());
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, seg, tape ? &tape->blocks[i] : nullptr);
  return final_ln.forward(x, tape ? &tape->final_ln : nullptr);
}

template <typename T>
void VisionEncoder<T>::backward(const VisionTape<T>& tape, const Mat<T>& dy) {
  Mat<T> dx = final_ln.backward(tape.final_ln, dy);
  for (std::size_t i = blocks.size(); i-- > 0;) dx = blocks[i].backward(tape.blocks[i], dx);
  const auto P = pos_embed.value.rows();
  const auto batch = dx.rows() / P;
  for (Eigen::Index b = 0; b < batch; ++b) pos_embed.grad += dx.block(b * P, 0, P, dx.cols());
  patch_embed.backward(tape.patches, dx);
}

template <typename T>
void VisionEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  patch_embed.collect(prefix + ".patch_embed", out);
  out.push_back({prefix + ".pos_embed", &pos_embed});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  final_ln.collect(prefix + ".final_ln", out);
}

// ---------------------------------------------------------------- hybrid encoder

template <typename T>
HybridBlock<T>::HybridBlock(int width, int heads, int ffn_mult, Rng& rng)
    : ln_query(width),
      ln_context(width),
      cross_attn(width, heads, rng),
      ln_self(width),
      self_attn(width, heads, rng),
      ln_ffn(width),
      ffn_in(width, width * ffn_mult, rng),
      ffn_out(width * ffn_mult, width, rng) {}

template <typename T>
Mat<T> HybridBlock<T>::forward(const Mat<T>& q, const Segments& q_seg, const Mat<T>& ctx, const Segments& ctx_seg,
                               HybridBlockCache<T>* c) const {
  Mat<T> a = ln_query.forward(q, c ? &c->ln_query : nullptr);
  Mat<T> kv = ln_context.forward(ctx, c ? &c->ln_context : nullptr);
  Mat<T> q1 = q + cross_attn.forward(a, q_seg, kv, ctx_seg, c ? &c->cross : nullptr);
  Mat<T> s = ln_self.forward(q1, c ? &c->ln_self : nullptr);
  Mat<T> q2 = q1 + self_attn.forward(s, q_seg, s, q_seg, c ? &c->self : nullptr);
  Mat<T> f = ln_ffn.forward(q2, c ? &c->ln_ffn : nullptr);
  Mat<T> hid = ffn_in.forward(f);
  Mat<T> act = gelu(hid);
  Mat<T> q3 = q2 + ffn_out.forward(act);
  if (c) {
    c->ffn_in = std::move(f);
    c->ffn_hidden = std::move(hid);
    c->ffn_act = std::move(act);
  }
  return q3;
}

template <typename T>
std::pair<Mat<T>, Mat<T>> HybridBlock<T>::backward(const HybridBlockCache<T>& c, const Mat<T>& dq3) {
  Mat<T> dq2 = dq3;
  Mat<T> dact = ffn_out.backward(c.ffn_act, dq3);
  Mat<T> dhid = gelu_backward(c.ffn_hidden, dact);
  dq2 += ln_ffn.backward(c.ln_ffn, ffn_in.backward(c.ffn_in, dhid));

  auto [ds_q, ds_kv] = self_attn.backward(c.self, dq2);
  Mat<T> dq1 = dq2 + ln_self.backward(c.ln_self, ds_q + ds_kv);

  auto [da, dkv] = cross_attn.backward(c.cross, dq1);
  Mat<T> dq = dq1 + ln_query.backward(c.ln_query, da);
  Mat<T> dctx = ln_context.backward(c.ln_context, dkv);
  return {std::move(dq), std::move(dctx)};
}

template <typename T>
void HybridBlock<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln_query.collect(prefix + ".ln_query", out);
  ln_context.collect(prefix + ".ln_context", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ln_self.collect(prefix + ".ln_self", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln_ffn.collect(prefix + ".ln_ffn", out);
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
}

template <typename T>
HybridEncoder<T>::HybridEncoder(const ModelConfig& cfg, Rng& rng) : final_ln(cfg.width) {
  query_tokens.resize(cfg.num_tokens(), cfg.width);
  init_truncated_normal(query_tokens, rng);
  token_embed.resize(cfg.vocab_size, cfg.width);
  init_truncated_normal(token_embed, rng);
  text_pos.resize(cfg.max_text_len, cfg.width);
  init_truncated_normal(text_pos, rng);
  for (int b = 0; b < cfg.hybrid_blocks; ++b) blocks.emplace_back(cfg.width, cfg.heads, cfg.ffn_mult, rng);
}

template <typename T>
Mat<T> HybridEncoder<T>::forward(const Mat<T>& vision_feats, int num_patches,
                                 const std::vector<std::vector<int>>& texts, int batch, HybridTape<T>* tape) const {
  const auto width = query_tokens.value.cols();
  const auto n_tok = static_cast<int>(query_tokens.value.rows());
  if (vision_feats.rows() != static_cast<Eigen::Index>(batch) * num_patches || vision_feats.cols() != width)
    throw ShapeError("vision features do not match batch and width");
  if (!texts.empty() && static_cast<int>(texts.size()) != batch) throw ShapeError("text batch size mismatch");

  Segments ctx_seg(static_cast<std::size_t>(batch) + 1, 0);
  for (int b = 0; b < batch; ++b) {
    const int t = texts.empty() ? 0 : static_cast<int>(texts[static_cast<std::size_t>(b)].size());
    ctx_seg[static_cast<std::size_t>(b) + 1] = ctx_seg[static_cast<std::size_t>(b)] + num_patches + t;
  }
  Mat<T> ctx(ctx_seg.back(), width);
  for (int b = 0; b < batch; ++b) {
    const int off = ctx_seg[static_cast<std::size_t>(b)];
    ctx.block(off, 0, num_patches, width) = vision_feats.block(static_cast<Eigen::Index>(b) * num_patches, 0, num_patches, width);
    if (texts.empty()) continue;
    const auto& seq = texts[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < seq.size(); ++t)
      ctx.row(off + num_patches + static_cast<int>(t)) = token_embed.value.row(seq[t]) + text_pos.value.row(static_cast<Eigen::Index>(t));
  }

  Segments q_seg = uniform_segments(batch, n_tok);
  Mat<T> q(static_cast<Eigen::Index>(batch) * n_tok, width);
  for (int b = 0; b < batch; ++b) q.block(static_cast<Eigen::Index>(b) * n_tok, 0, n_tok, width) = query_tokens.value;

  if (tape) {
    tape->batch = batch;
    tape->num_patches = num_patches;
    tape->q_seg = q_seg;
    tape->ctx_seg = ctx_seg;
    tape->texts = texts;
    tape->blocks.resize(blocks.size());
  }
  for (std::size_t i = 0; i < blocks.size(); ++i)
    q = blocks[i].forward(q, q_seg, ctx, ctx_seg, tape ? &tape->blocks[i] : nullptr);
  Mat<T> out = final_ln.forward(q, tape ? &tape->final_ln : nullptr);
  if (tape) tape->output = out;
  return out;
}

template <typename T>
Mat<T> HybridEncoder<T>::backward(const HybridTape<T>& tape, const Mat<T>& dy) {
  const auto width = query_tokens.value.cols();
  const auto n_tok = query_tokens.value.rows();
  Mat<T> dq = final_ln.backward(tape.final_ln, dy);
  Mat<T> dctx = Mat<T>::Zero(tape.ctx_seg.back(), width);
  for (std::size_t i = blocks.size(); i-- > 0;) {
    auto [dq_prev, dctx_i] = blocks[i].backward(tape.blocks[i], dq);
    dq = std::move(dq_prev);
    dctx += dctx_i;
  }
  for (int b = 0; b < tape.batch; ++b) query_tokens.grad += dq.block(b * n_tok, 0, n_tok, width);

  const int P = tape.num_patches;
  Mat<T> dvision(static_cast<Eigen::Index>(tape.batch) * P, width);
  for (int b = 0; b < tape.batch; ++b) {
    const int off = tape.ctx_seg[static_cast<std::size_t>(b)];
    dvision.block(static_cast<Eigen::Index>(b) * P, 0, P, width) = dctx.block(off, 0, P, width);
    if (tape.texts.empty()) continue;
    const auto& seq = tape.texts[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto row = dctx.row(off + P + static_cast<int>(t));
      token_embed.grad.row(seq[t]) += row;
      text_pos.grad.row(static_cast<Eigen::Index>(t)) += row;
    }
  }
  return dvision;
}

template <typename T>
void HybridEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".query_tokens", &query_tokens});
  out.push_back({prefix + ".token_embed", &token_embed});
  out.push_back({prefix + ".text_pos", &text_pos});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  final_ln.collect(prefix + ".final_ln", out);
}

// ---------------------------------------------------------------- dual encoder

template <typename T>
DualEncoder<T>::DualEncoder(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  cfg.validate();
  // Each parameter group draws from its own stream so DI and GM start from
  // independent values and adding a group never perturbs the others.
  Rng r_vision = Rng::substream(seed, "init.vision", 0);
  Rng r_di = Rng::substream(seed, "init.di_encoder", 0);
  Rng r_di_h = Rng::substream(seed, "init.di_linear_h", 0);
  Rng r_di_i = Rng::substream(seed, "init.di_linear_i", 0);
  Rng r_gm = Rng::substream(seed, "init.gm_encoder", 0);
  Rng r_gm_h = Rng::substream(seed, "init.gm_linear_h", 0);
  vision = VisionEncoder<T>(cfg, r_vision);
  di_encoder = HybridEncoder<T>(cfg, r_di);
  di_linear_h = Linear<T>(cfg.width, cfg.feature_dim, r_di_h);
  di_linear_i = Linear<T>(cfg.width, cfg.feature_dim, r_di_i);
  gm_encoder = HybridEncoder<T>(cfg, r_gm);
  gm_linear_h = Linear<T>(cfg.width, cfg.feature_dim, r_gm_h);
}

template <typename T>
Mat<T> DualEncoder<T>::vision_encode(const std::vector<const Image*>& images, VisionTape<T>* tape) const {
  const int P = config.num_patches();
  Mat<T> patches(static_cast<Eigen::Index>(images.size()) * P, config.patch_dim());
  for (std::size_t i = 0; i < images.size(); ++i)
    patches.block(static_cast<Eigen::Index>(i) * P, 0, P, config.patch_dim()) =
        patchify<T>(*images[i], config.image_size, config.patch_size);
  return vision.forward(patches, static_cast<int>(images.size()), tape);
}

template <typename T>
void DualEncoder<T>::validate_tokens(const std::vector<int>& tokens) const {
  if (static_cast<int>(tokens.size()) > config.max_text_len)
    throw ValidationError("modification text longer than max_text_len");
  for (int t : tokens)
    if (t < 0 || t >= config.vocab_size) throw ValidationError("token id " + std::to_string(t) + " outside vocabulary");
}

template <typename T>
Mat<T> DualEncoder<T>::encode_queries(Branch branch, const Mat<T>& vision_feats,
                                      const std::vector<std::vector<int>>& texts, EncodeTape<T>* tape) const {
  for (const auto& t : texts) validate_tokens(t);
  const int batch = static_cast<int>(texts.size());
  const auto& enc = branch == Branch::kDI ? di_encoder : gm_encoder;
  const auto& proj = branch == Branch::kDI ? di_linear_h : gm_linear_h;
  if (tape) {
    tape->branch = branch;
    tape->image_only = false;
  }
  // Texts must be non-empty per sample to keep the query path distinct from
  // the image-only path; an empty modification is still legal.
  Mat<T> h = enc.forward(vision_feats, config.num_patches(), texts.empty() ? std::vector<std::vector<int>>{} : texts,
                         batch, tape ? &tape->hybrid : nullptr);
  return proj.forward(h);
}

template <typename T>
Mat<T> DualEncoder<T>::encode_images(const Mat<T>& vision_feats, int batch, EncodeTape<T>* tape) const {
  if (tape) {
    tape->branch = Branch::kDI;
    tape->image_only = true;
  }
  Mat<T> h = di_encoder.forward(vision_feats, config.num_patches(), {}, batch, tape ? &tape->hybrid : nullptr);
  return di_linear_i.forward(h);
}

template <typename T>
Mat<T> DualEncoder<T>::backward(const EncodeTape<T>& tape, const Mat<T>& d_tokens) {
  const bool di = tape.branch == Branch::kDI;
  Linear<T>& proj = tape.image_only ? di_linear_i : (di ? di_linear_h : gm_linear_h);
  HybridEncoder<T>& enc = di ? di_encoder : gm_encoder;
  Mat<T> dh = proj.backward(tape.hybrid.output, d_tokens);
  return enc.backward(tape.hybrid, dh);
}

template <typename T>
TokenFeatures<T> DualEncoder<T>::encode_query(const Image& reference, const std::vector<int>& tokens, Branch branch,
                                              bool normalize) const {
  TokenFeatures<T> out;
  out.tokens = encode_queries(branch, vision_encode(reference), {tokens});
  if (normalize) out.normalize_cls();
  return out;
}

template <typename T>
TokenFeatures<T> DualEncoder<T>::encode_image(const Image& image, bool normalize) const {
  TokenFeatures<T> out;
  out.tokens = encode_images(vision_encode(image), 1);
  if (normalize) out.normalize_cls();
  return out;
}

template <typename T>
void DualEncoder<T>::collect(ParamList<T>& out) {
  vision.collect("vision", out);
  di_encoder.collect("di_encoder", out);
  di_linear_h.collect("di_linear_h", out);
  di_linear_i.collect("di_linear_i", out);
  gm_encoder.collect("gm_encoder", out);
  gm_linear_h.collect("gm_linear_h", out);
}

#define DFUSION_INSTANTIATE(T)                                                  \
  template struct TokenFeatures<T>;                                             \
  template Mat<T> patchify<T>(const Image&, int, int);                          \
  template struct VisionBlock<T>;                                               \
  template struct VisionEncoder<T>;                                             \
  template struct HybridBlock<T>;                                               \
  template struct HybridEncoder<T>;                                             \
  template struct DualEncoder<T>;

DFUSION_INSTANTIATE(float)
DFUSION_INSTANTIATE(double)

}  // namespace dfusion
