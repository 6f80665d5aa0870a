#pragma once

#include <string>
#include <vector>

#include "detailfusion/common/rng.hpp"
#include "detailfusion/nn/tensor.hpp"

namespace dfusion {

inline constexpr double kInitSigma = 0.02;

template <typename T>
void init_truncated_normal(Param<T>& p, Rng& rng, double sigma = kInitSigma);

// y = x W + b, W stored (in x out).
template <typename T>
struct Linear {
  Param<T> weight;
  Param<T> bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng);

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }
  Mat<T> forward(const Mat<T>& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
  void zero_output();
};

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
struct LayerNorm {
  Param<T> gamma;
  Param<T> beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Mat<T> forward(const Mat<T>& x, LayerNormCache<T>* cache) const;
  Mat<T> backward(const LayerNormCache<T>& cache, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
Mat<T> gelu(const Mat<T>& x);
template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy);
template <typename T>
Mat<T> relu(const Mat<T>& x);
template <typename T>
Mat<T> relu_backward(const Mat<T>& x, const Mat<T>& dy);

template <typename T>
struct AttentionCache {
  Mat<T> xq, xkv, q, k, v, heads;
  std::vector<Mat<T>> probs;  // per (segment, head)
  Segments q_seg, kv_seg;
};

// Multi-head scaled dot-product attention over stacked segments: queries of
// segment b attend only to keys/values of segment b.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q_proj, k_proj, v_proj, out_proj;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, Rng& rng, bool zero_output = false);

  Mat<T> forward(const Mat<T>& xq, const Segments& q_seg, const Mat<T>& xkv, const Segments& kv_seg,
                 AttentionCache<T>* cache) const;
  // Returns {dL/dxq, dL/dxkv}.
  std::pair<Mat<T>, Mat<T>> backward(const AttentionCache<T>& cache, const Mat<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
};

// Row-wise L2 normalisation and its backward.
template <typename T>
Mat<T> l2_normalize_rows(const Mat<T>& x, Eigen::Matrix<T, Eigen::Dynamic, 1>* norms = nullptr);
template <typename T>
Mat<T> l2_normalize_rows_backward(const Mat<T>& y, const Eigen::Matrix<T, Eigen::Dynamic, 1>& norms,
                                  const Mat<T>& dy);

}  // namespace dfusion
