#pragma once

#include <functional>
#include <span>

#include "lilac/tensor.hpp"

namespace lilac {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences, element by element, in 64-bit. The error per element is
// |analytic - fd| / max(|analytic|, |fd|, 1e-8).
//
// `fn` must rebuild the graph from the current parameter values on each call.
// It is evaluated twice at the base point first; differing results raise
// ContractError (a non-deterministic function cannot be checked).
// `max_elements_per_param` (0 = all) subsamples large parameters with a fixed stride.
GradCheckResult grad_check(const std::function<Tensor<double>()>& fn,
                           std::span<Tensor<double>> params, double eps = 1e-5,
                           std::size_t max_elements_per_param = 0);

}  // namespace lilac
