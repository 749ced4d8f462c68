#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "actc/errors.hpp"
#include "actc/tensor.hpp"

namespace actc {

// Central-difference gradient check. loss_fn must zero the grads, run the
// analytic forward/backward over the current parameter values, and return
// the loss. Returns the max over all coordinates of
// |analytic - numeric| / max(1, |analytic|).
inline double finite_diff_check(const std::function<double()>& loss_fn,
                                const std::vector<Parameter*>& params,
                                double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step <= 0");
  double base = loss_fn();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);
  double again = loss_fn();
  if (again != base)
    throw InconsistencyError("finite_diff_check: loss_fn is not deterministic");

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& v = params[pi]->value;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      double keep = v.data[i];
      v.data[i] = keep + step;
      double up = loss_fn();
      v.data[i] = keep - step;
      double down = loss_fn();
      v.data[i] = keep;
      double numeric = (up - down) / (2.0 * step);
      double a = analytic[pi].data[i];
      double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace actc
