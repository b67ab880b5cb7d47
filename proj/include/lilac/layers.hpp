#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lilac/ops.hpp"
#include "lilac/rng.hpp"
#include "lilac/tensor.hpp"

namespace lilac {

// Ordered (name, tensor) pairs. Tensors are handles, so the list aliases model storage.
template <typename Real>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Real>>>;

template <typename Real>
using TensorVisitor = std::function<void(const std::string& name, Tensor<Real>& tensor)>;

template <typename Real>
std::size_t count_elements(const NamedTensors<Real>& tensors) {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

template <typename Real>
Tensor<Real> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor<Real>::from(std::move(shape), std::move(v));
}

template <typename Real>
struct Conv1d {
  Tensor<Real> weight;  // [C_out, C_in, K]
  Tensor<Real> bias;    // [C_out]
  std::size_t stride = 1;

  static Conv1d random(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng,
                       std::size_t stride = 1) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    return {uniform_tensor<Real>({out, in, kernel}, bound, rng), Tensor<Real>::zeros({out}), stride};
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }

  Tensor<Real> operator()(const Tensor<Real>& x) const { return ops::conv1d(x, weight, bias, stride); }

  void visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename Real>
struct GroupNorm {
  Tensor<Real> gamma;
  Tensor<Real> beta;
  std::size_t groups = 1;

  static GroupNorm make(std::size_t channels) {
    return {Tensor<Real>::full({channels}, Real(1)), Tensor<Real>::zeros({channels}),
            ops::default_groups(channels)};
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return ops::group_norm(x, groups, gamma, beta);
  }

  void visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

template <typename Real>
struct Linear {
  Tensor<Real> weight;  // [out, in]
  Tensor<Real> bias;    // [out]

  static Linear random(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {uniform_tensor<Real>({out, in}, bound, rng), Tensor<Real>::zeros({out})};
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const { return ops::linear(x, weight, bias); }

  void visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

// Pre-activation residual block with embedding-driven scale/shift:
//   h = conv1(silu(norm1(x))); h = norm2(h) * (1 + s) + t; out = x + conv2(silu(h))
template <typename Real>
struct ResBlock {
  GroupNorm<Real> norm1;
  Conv1d<Real> conv1;
  Linear<Real> modulation;  // embed_dim -> 2*width
  GroupNorm<Real> norm2;
  Conv1d<Real> conv2;

  static ResBlock random(std::size_t width, std::size_t embed_dim, Rng& rng) {
    ResBlock b;
    b.norm1 = GroupNorm<Real>::make(width);
    b.conv1 = Conv1d<Real>::random(width, width, 3, rng);
    b.modulation = Linear<Real>::random(embed_dim, 2 * width, rng);
    b.norm2 = GroupNorm<Real>::make(width);
    b.conv2 = Conv1d<Real>::random(width, width, 3, rng);
    return b;
  }

  Tensor<Real> operator()(const Tensor<Real>& x, const Tensor<Real>& emb) const {
    auto h = conv1(ops::silu(norm1(x)));
    h = ops::scale_shift(norm2(h), modulation(emb));
    h = conv2(ops::silu(h));
    return ops::add(x, h);
  }

  void visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
    norm1.visit(prefix + ".norm1", fn);
    conv1.visit(prefix + ".conv1", fn);
    modulation.visit(prefix + ".modulation", fn);
    norm2.visit(prefix + ".norm2", fn);
    conv2.visit(prefix + ".conv2", fn);
  }
};

// Replaces every tensor reachable through `visit` with a deep copy.
template <typename Real, typename Module>
Module deep_copy(const Module& module, bool requires_grad) {
  Module copy = module;
  copy.visit("", [requires_grad](const std::string&, Tensor<Real>& t) { t = t.clone(requires_grad); });
  return copy;
}

}  // namespace lilac
