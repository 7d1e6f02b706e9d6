#include "mlip/gradcheck.hpp"

#include <cmath>

namespace mlip {

GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double eps, double tol, int elements_per_param,
                                  double denom_floor) {
  if (eps < 1e-4 || eps > 1e-2)
    throw std::invalid_argument("finite_diff_check: eps must lie in [1e-4, 1e-2]");

  FullPrecisionScope full;

  Tensor l0 = f();
  if (l0.size() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
  Tensor l1 = f();
  if (l0.data() != l1.data())
    throw std::runtime_error("finite_diff_check: f is not deterministic at fixed parameters");

  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    (void)name;
    if (p.has_grad())
      analytic.push_back(p.node()->grad);
    else
      analytic.push_back(std::vector<double>(static_cast<size_t>(p.size()), 0.0));
  }

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    Tensor param = p;
    int n = param.size();
    int step = 1;
    if (elements_per_param > 0 && n > elements_per_param) step = n / elements_per_param;
    for (int i = 0; i < n; i += step) {
      double saved = param.data()[static_cast<size_t>(i)];
      param.data_mut()[static_cast<size_t>(i)] = saved + eps;
      double fp = f().value(0);
      param.data_mut()[static_cast<size_t>(i)] = saved - eps;
      double fm = f().value(0);
      param.data_mut()[static_cast<size_t>(i)] = saved;

      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[pi][static_cast<size_t>(i)];
      double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
      double rel = std::fabs(a - numeric) / denom;

      ++report.checked;
      GradCheckEntry entry{name, i, a, numeric, rel};
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = entry;
      }
      if (rel > tol) report.failures.push_back(entry);
    }
  }
  return report;
}

}  // namespace mlip
