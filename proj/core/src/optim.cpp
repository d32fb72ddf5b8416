#include "seqxrec/optim.hpp"

#include <cmath>

namespace SEQXREC_NS::num {

Adam::Adam(ParamList params, AdamConfig config) : config_(config) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
    params_.push_back(std::move(p));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    auto values = p.values();
    auto grad = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + config_.weight_decay * static_cast<double>(values[i]);
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double update = config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      values[i] = static_cast<Real>(static_cast<double>(values[i]) - update);
    }
  }
}

void Adam::zero_grad() { zero_grads(params_); }

}  // namespace SEQXREC_NS::num
