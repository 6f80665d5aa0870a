#include "detailfusion/training/optimizer.hpp"

#include <cmath>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

AdamW::AdamW(ParamList<float> params, AdamWOptions options) : params_(std::move(params)), opt_(options) {
  if (!(opt_.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(opt_.beta1 >= 0.0 && opt_.beta1 < 1.0) || !(opt_.beta2 >= 0.0 && opt_.beta2 < 1.0))
    throw ConfigError("optimizer betas must lie in [0, 1)");
  if (!(opt_.weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  for (const auto& p : params_) {
    m_.push_back(Mat<float>::Zero(p.param->value.rows(), p.param->value.cols()));
    v_.push_back(Mat<float>::Zero(p.param->value.rows(), p.param->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(opt_.beta1);
  const float b2 = static_cast<float>(opt_.beta2);
  const float step = static_cast<float>(opt_.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(opt_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param<float>& p = *params_[i].param;
    if (!p.grad.allFinite()) throw NumericError("non-finite gradient in " + params_[i].name);
    m_[i] = b1 * m_[i] + (1.0f - b1) * p.grad;
    v_[i] = b2 * v_[i] + (1.0f - b2) * p.grad.cwiseProduct(p.grad);
    if (opt_.lr == 0.0) continue;
    if (p.value.rows() > 1 && opt_.weight_decay > 0.0)
      p.value *= static_cast<float>(1.0 - opt_.lr * opt_.weight_decay);
    p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.param->zero_grad();
}

}  // namespace dfusion
