#pragma once

#include <cstdint>
#include <vector>

#include "detailfusion/nn/tensor.hpp"

namespace dfusion {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Adam with decoupled weight decay. Decay applies to matrices only; biases
// and layer-norm affine parameters (single-row tensors) are not decayed.
class AdamW {
 public:
  AdamW(ParamList<float> params, AdamWOptions options);

  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const AdamWOptions& options() const { return opt_; }

 private:
  ParamList<float> params_;
  AdamWOptions opt_;
  std::vector<Mat<float>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace dfusion
