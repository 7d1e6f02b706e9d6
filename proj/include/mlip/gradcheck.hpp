#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mlip/tensor.hpp"

namespace mlip {

struct GradCheckEntry {
  std::string param;
  int index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;
  int checked = 0;
  bool pass(double tol) const { return max_rel_error <= tol; }
};

// Compares reverse-mode gradients against central differences
// (f(p+eps) - f(p-eps)) / (2 eps) for every listed parameter element.
// Evaluations run with float32 rounding disabled so the differences are not
// dominated by storage quantization; relative error is
// |a - n| / max(|a|, |n|, floor). Throws if f is not deterministic or if
// eps falls outside [1e-4, 1e-2].
//
// elements_per_param > 0 checks only that many deterministically spread
// elements of each tensor (0 = all).
GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double eps, double tol, int elements_per_param = 0,
                                  double denom_floor = 1e-2);

}  // namespace mlip
