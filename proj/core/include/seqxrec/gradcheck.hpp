#pragma once

#include <functional>
#include <string>

#include "seqxrec/tape.hpp"

namespace SEQXREC_NS::num {

// f must rebuild the computation on the tape it is handed and return a
// scalar; it is called once on a recording tape and then twice per parameter
// entry on inference tapes.
using ScalarFn = std::function<Tensor(Tape&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries = 0;
};

// Compares tape gradients with central differences over every entry of every
// parameter. Relative error is |a - n| / max(|a|, |n|, 1e-8). Parameter
// values are restored exactly; their grads are left zeroed.
GradCheckReport grad_check_report(const ScalarFn& f, const ParamList& params, double eps);
double grad_check(const ScalarFn& f, const ParamList& params, double eps);
double grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps);

}  // namespace SEQXREC_NS::num
