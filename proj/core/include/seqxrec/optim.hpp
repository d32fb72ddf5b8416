#pragma once

#include <vector>

#include "seqxrec/tensor.hpp"

namespace SEQXREC_NS::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty folded into the gradient before the moment updates.
  double weight_decay = 0.0;
};

// Adam over the parameters that require gradients. Parameters without an
// accumulated gradient are skipped for that step.
class Adam {
 public:
  Adam(ParamList params, AdamConfig config);

  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParamList params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace SEQXREC_NS::num
