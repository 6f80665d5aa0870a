#include "detailfusion/nn/layers.hpp"

#include <cmath>
#include <numbers>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

template <typename T>
void init_truncated_normal(Param<T>& p, Rng& rng, double sigma) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.truncated_normal(sigma));
  p.zero_grad();
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in, int out, Rng& rng) {
  weight.resize(in, out);
  bias.resize(1, out);
  init_truncated_normal(weight, rng);
}

template <typename T>
Mat<T> Linear<T>::forward(const Mat<T>& x) const {
  if (x.cols() != weight.value.rows()) throw ShapeError("linear input width mismatch");
  Mat<T> y(x.rows(), weight.value.cols());
  y.noalias() = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const Mat<T>& x, const Mat<T>& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  Mat<T> dx(dy.rows(), weight.value.rows());
  dx.noalias() = dy * weight.value.transpose();
  return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

template <typename T>
void Linear<T>::zero_output() {
  weight.value.setZero();
  bias.value.setZero();
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(int dim) {
  gamma.resize(1, dim);
  gamma.value.setOnes();
  beta.resize(1, dim);
}

template <typename T>
Mat<T> LayerNorm<T>::forward(const Mat<T>& x, LayerNormCache<T>* cache) const {
  const auto n = x.cols();
  Mat<T> xhat(x.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    auto centered = (x.row(r).array() - mean);
    const T var = centered.square().sum() / static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std(r) = is;
    xhat.row(r) = centered * is;
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Mat<T> LayerNorm<T>::backward(const LayerNormCache<T>& c, const Mat<T>& dy) {
  gamma.grad.row(0) += (dy.array() * c.xhat.array()).matrix().colwise().sum();
  beta.grad.row(0) += dy.colwise().sum();
  const auto n = static_cast<T>(dy.cols());
  Mat<T> dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T s1 = dxhat.row(r).sum();
    const T s2 = dxhat.row(r).dot(c.xhat.row(r));
    dx.row(r) = (c.inv_std(r) / n) * (n * dxhat.row(r).array() - s1 - c.xhat.row(r).array() * s2);
  }
  return dx;
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

// ---------------------------------------------------------------- activations

namespace {
template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  return x.unaryExpr([](T v) {
    const T u = kGeluC<T> * (v + T(0.044715) * v * v * v);
    return T(0.5) * v * (T(1) + std::tanh(u));
  });
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
  Mat<T> d = x.unaryExpr([](T v) {
    const T u = kGeluC<T> * (v + T(0.044715) * v * v * v);
    const T t = std::tanh(u);
    const T du = kGeluC<T> * (T(1) + T(3) * T(0.044715) * v * v);
    return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
  });
  return (d.array() * dy.array()).matrix();
}

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
Mat<T> relu_backward(const Mat<T>& x, const Mat<T>& dy) {
  return (x.array() > T(0)).select(dy, T(0));
}

// ---------------------------------------------------------------- attention

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(int dim, int h, Rng& rng, bool zero_output)
    : q_proj(dim, dim, rng), k_proj(dim, dim, rng), v_proj(dim, dim, rng), out_proj(dim, dim, rng), heads(h) {
  if (h <= 0 || dim % h != 0) throw ConfigError("attention width must be divisible by the head count");
  if (zero_output) out_proj.zero_output();
}

template <typename T>
Mat<T> MultiHeadAttention<T>::forward(const Mat<T>& xq, const Segments& q_seg, const Mat<T>& xkv,
                                      const Segments& kv_seg, AttentionCache<T>* cache) const {
  if (q_seg.size() != kv_seg.size()) throw ShapeError("query and key segment counts differ");
  if (q_seg.back() != xq.rows() || kv_seg.back() != xkv.rows()) throw ShapeError("segments do not cover inputs");
  const auto dim = q_proj.out_features();
  const int dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> q = q_proj.forward(xq);
  Mat<T> k = k_proj.forward(xkv);
  Mat<T> v = v_proj.forward(xkv);
  Mat<T> h_out(xq.rows(), dim);
  std::vector<Mat<T>> probs;
  if (cache) probs.reserve((q_seg.size() - 1) * static_cast<std::size_t>(heads));

  for (std::size_t b = 0; b + 1 < q_seg.size(); ++b) {
    const int q0 = q_seg[b], nq = q_seg[b + 1] - q_seg[b];
    const int k0 = kv_seg[b], nk = kv_seg[b + 1] - kv_seg[b];
    if (nk <= 0) throw ShapeError("attention segment without keys");
    for (int hh = 0; hh < heads; ++hh) {
      Mat<T> s(nq, nk);
      s.noalias() = q.block(q0, hh * dh, nq, dh) * k.block(k0, hh * dh, nk, dh).transpose();
      s *= scale;
      for (int r = 0; r < nq; ++r) {
        const T m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      h_out.block(q0, hh * dh, nq, dh).noalias() = s * v.block(k0, hh * dh, nk, dh);
      if (cache) probs.push_back(std::move(s));
    }
  }
  Mat<T> y = out_proj.forward(h_out);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->heads = std::move(h_out);
    cache->probs = std::move(probs);
    cache->q_seg = q_seg;
    cache->kv_seg = kv_seg;
  }
  return y;
}

template <typename T>
std::pair<Mat<T>, Mat<T>> MultiHeadAttention<T>::backward(const AttentionCache<T>& c, const Mat<T>& dy) {
  const auto dim = q_proj.out_features();
  const int dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> dheads = out_proj.backward(c.heads, dy);
  Mat<T> dq = Mat<T>::Zero(c.q.rows(), dim);
  Mat<T> dk = Mat<T>::Zero(c.k.rows(), dim);
  Mat<T> dv = Mat<T>::Zero(c.v.rows(), dim);

  std::size_t p = 0;
  for (std::size_t b = 0; b + 1 < c.q_seg.size(); ++b) {
    const int q0 = c.q_seg[b], nq = c.q_seg[b + 1] - c.q_seg[b];
    const int k0 = c.kv_seg[b], nk = c.kv_seg[b + 1] - c.kv_seg[b];
    for (int hh = 0; hh < heads; ++hh, ++p) {
      const Mat<T>& prob = c.probs[p];
      auto dout = dheads.block(q0, hh * dh, nq, dh);
      Mat<T> dprob(nq, nk);
      dprob.noalias() = dout * c.v.block(k0, hh * dh, nk, dh).transpose();
      dv.block(k0, hh * dh, nk, dh).noalias() += prob.transpose() * dout;
      // softmax backward: ds = P * (dP - rowsum(dP * P))
      Mat<T> ds(nq, nk);
      for (int r = 0; r < nq; ++r) {
        const T dot = prob.row(r).dot(dprob.row(r));
        ds.row(r) = prob.row(r).array() * (dprob.row(r).array() - dot);
      }
      ds *= scale;
      dq.block(q0, hh * dh, nq, dh).noalias() += ds * c.k.block(k0, hh * dh, nk, dh);
      dk.block(k0, hh * dh, nk, dh).noalias() += ds.transpose() * c.q.block(q0, hh * dh, nq, dh);
    }
  }
  Mat<T> dxq = q_proj.backward(c.xq, dq);
  Mat<T> dxkv = k_proj.backward(c.xkv, dk);
  dxkv += v_proj.backward(c.xkv, dv);
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParamList<T>& out) {
  q_proj.collect(prefix + ".q", out);
  k_proj.collect(prefix + ".k", out);
  v_proj.collect(prefix + ".v", out);
  out_proj.collect(prefix + ".out", out);
}

// ---------------------------------------------------------------- normalisation

template <typename T>
Mat<T> l2_normalize_rows(const Mat<T>& x, Eigen::Matrix<T, Eigen::Dynamic, 1>* norms) {
  Mat<T> y(x.rows(), x.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> n(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    n(r) = x.row(r).norm();
    if (!(n(r) > T(0)) || !std::isfinite(static_cast<double>(n(r))))
      throw NumericError("cannot normalise a zero or non-finite vector");
    y.row(r) = x.row(r) / n(r);
  }
  if (norms) *norms = std::move(n);
  return y;
}

template <typename T>
Mat<T> l2_normalize_rows_backward(const Mat<T>& y, const Eigen::Matrix<T, Eigen::Dynamic, 1>& norms,
                                  const Mat<T>& dy) {
  Mat<T> dx(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const T d = y.row(r).dot(dy.row(r));
    dx.row(r) = (dy.row(r) - d * y.row(r)) / norms(r);
  }
  return dx;
}

#define DFUSION_INSTANTIATE(T)                                                                         \
  template void init_truncated_normal<T>(Param<T>&, Rng&, double);                                    \
  template struct Linear<T>;                                                                           \
  template struct LayerNorm<T>;                                                                        \
  template Mat<T> gelu<T>(const Mat<T>&);                                                              \
  template Mat<T> gelu_backward<T>(const Mat<T>&, const Mat<T>&);                                      \
  template Mat<T> relu<T>(const Mat<T>&);                                                              \
  template Mat<T> relu_backward<T>(const Mat<T>&, const Mat<T>&);                                      \
  template struct MultiHeadAttention<T>;                                                               \
  template Mat<T> l2_normalize_rows<T>(const Mat<T>&, Eigen::Matrix<T, Eigen::Dynamic, 1>*);           \
  template Mat<T> l2_normalize_rows_backward<T>(const Mat<T>&, const Eigen::Matrix<T, Eigen::Dynamic, 1>&, \
                                                const Mat<T>&);

DFUSION_INSTANTIATE(float)
DFUSION_INSTANTIATE(double)

}  // namespace dfusion
