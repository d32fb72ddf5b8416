#include "seqxrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace SEQXREC_NS::num {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape(Tape::Mode::kInference);
  const Tensor out = f(tape);
  const double v = static_cast<double>(out.item());
  if (!std::isfinite(v)) throw DomainError("grad_check: function produced a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, const ParamList& params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw DomainError("grad_check: eps must lie in (0, 1e-2]");

  zero_grads(params);
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    const Tensor loss = f(tape);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw DomainError("grad_check: function produced a non-finite value");
    if (tape.size() > 0 && loss.requires_grad()) tape.backward(loss);
    for (const auto& p : params) {
      const auto g = p.tensor.grad();
      std::vector<double> copy(p.tensor.numel(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) copy[i] = static_cast<double>(g[i]);
      analytic.push_back(std::move(copy));
    }
  }
  zero_grads(params);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const Real saved = t.at(i);
      t.at(i) = static_cast<Real>(static_cast<double>(saved) + eps);
      const double up = evaluate(f);
      t.at(i) = static_cast<Real>(static_cast<double>(saved) - eps);
      const double down = evaluate(f);
      t.at(i) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = params[k].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const ScalarFn& f, const ParamList& params, double eps) {
  return grad_check_report(f, params, eps).max_relative_error;
}

double grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  ParamList named;
  for (std::size_t i = 0; i < params.size(); ++i) named.push_back({"param" + std::to_string(i), params[i]});
  return grad_check(f, named, eps);
}

}  // namespace SEQXREC_NS::num
