#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mhn/params.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;

  bool passed(double tol) const { return max_rel_err < tol; }
};

// |analytic - numeric| relative to max(|analytic|, |numeric|, 1).
inline double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
  return std::fabs(analytic - numeric) / denom;
}

// Central finite differences over every element of every parameter in the
// store. `loss_fn` rebuilds the scalar loss from current parameter values,
// so the numeric side only ever uses forward evaluations.
template <typename LossFn>
GradCheckResult check_gradients(const std::string& name, ParamStore& params, LossFn&& loss_fn,
                                double h = 1e-6) {
  GradCheckResult result{name, 0.0, 0};

  params.zero_grads();
  Tensor loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [pname, t] : params.entries()) analytic.push_back(t.grad());

  std::size_t pi = 0;
  for (const auto& [pname, t] : params.entries()) {
    Tensor tensor = t;
    auto& value = tensor.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      double plus, minus;
      {
        NoGradGuard ng;
        value[i] = saved + h;
        plus = loss_fn().item();
        value[i] = saved - h;
        minus = loss_fn().item();
      }
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      result.max_rel_err = std::max(result.max_rel_err, grad_rel_err(analytic[pi][i], numeric));
      ++result.checked;
    }
    ++pi;
  }
  return result;
}

}  // namespace mhn
