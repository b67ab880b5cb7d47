#include "lilac/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lilac {

GradCheckResult grad_check(const std::function<Tensor<double>()>& fn,
                           std::span<Tensor<double>> params, double eps,
                           std::size_t max_elements_per_param) {
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: parameter does not require grad");
    p.zero_grad();
  }
  const Tensor<double> base = fn();
  const double base_value = base.item();
  if (fn().item() != base_value) {
    throw ContractError("grad_check: function is non-deterministic; finite differences unusable");
  }
  backward(base);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    const std::size_t n = p.numel();
    const std::size_t stride =
        (max_elements_per_param == 0 || n <= max_elements_per_param) ? 1 : n / max_elements_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      auto data = p.mutable_data();
      const double original = data[i];
      double fd = 0;
      {
        NoGradGuard no_grad;
        data[i] = original + eps;
        const double up = fn().item();
        data[i] = original - eps;
        const double down = fn().item();
        data[i] = original;
        fd = (up - down) / (2 * eps);
      }
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
      const double err = std::abs(a - fd) / denom;
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = fd;
      }
    }
  }
  return result;
}

}  // namespace lilac
