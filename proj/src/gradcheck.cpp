#include "stformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace stf {

GradCheckResult gradient_check_detailed(const std::function<Tensor()>& f,
                                        std::span<Tensor> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("gradient_check: eps <= 0");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(f());

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f().item();
      values[i] = saved - eps;
      const double minus = f().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

double gradient_check(const std::function<Tensor()>& f,
                      std::span<Tensor> params, double eps) {
  return gradient_check_detailed(f, params, eps).max_rel_error;
}

}  // namespace stf
