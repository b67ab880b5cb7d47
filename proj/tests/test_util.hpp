#pragma once

#include <cmath>
#include <vector>

#include "lilac/backbone.hpp"
#include "lilac/rng.hpp"
#include "lilac/tensor.hpp"

namespace lilac::test {

template <typename Real>
Tensor<Real> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(scale * rng.normal());
  return Tensor<Real>::from(std::move(shape), std::move(v), requires_grad);
}

// Small two-level backbone for fast tests; every group norm sees 2+ channels per group.
inline BackboneConfig toy_config() {
  BackboneConfig c;
  c.latent_channels = 12;
  c.levels = {16, 32};
  c.embed_dim = 8;
  c.context_channels = 12;
  c.num_styles = 3;
  c.fourier_features = 4;
  return c;
}

template <typename Real>
Conditions<Real> random_conditions(const BackboneConfig& c, std::size_t batch, std::size_t frames, Rng& rng) {
  Conditions<Real> cond;
  for (std::size_t b = 0; b < batch; ++b) {
    cond.style.push_back(b % 3 == 2 ? -1 : static_cast<int>(rng.below(c.num_styles)));
    cond.keep_context.push_back(b % 2 == 0);
  }
  cond.context = random_tensor<Real>({batch, c.context_channels, frames}, rng, 0.5);
  return cond;
}

template <typename Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return worst;
}

template <typename Real>
bool bit_equal(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace lilac::test
