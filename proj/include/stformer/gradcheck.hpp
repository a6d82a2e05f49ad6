#pragma once

#include <functional>
#include <span>
#include <string>

#include "stformer/tensor.hpp"

namespace stf {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `f` against central differences
/// (f(theta + eps) - f(theta - eps)) / (2 eps), coordinate by coordinate.
/// `f` must rebuild its graph from the current parameter values on every
/// call and be deterministic. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8).
GradCheckResult gradient_check_detailed(const std::function<Tensor()>& f,
                                        std::span<Tensor> params,
                                        double eps = 1e-6);

double gradient_check(const std::function<Tensor()>& f,
                      std::span<Tensor> params, double eps = 1e-6);

}  // namespace stf
