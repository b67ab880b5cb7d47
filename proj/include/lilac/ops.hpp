#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lilac/tensor.hpp"

// Differentiable primitives. Sequence tensors are [batch, channels, time];
// conv1d also accepts an unbatched [channels, time] input.
namespace lilac::ops {

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

// Multiplies every element of sample b by factors[b] (constants, no gradient).
template <typename Real>
Tensor<Real> scale_samples(const Tensor<Real>& x, std::span<const Real> factors);

// Zero-padded "same" convolution for stride 1; stride 2 halves the length.
// weight: [C_out, C_in, K] with K odd; bias: [C_out].
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t stride = 1);

// Group normalization over (channels-in-group, time) per sample, with per-channel affine.
template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, std::size_t groups, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps = Real(1e-5));

// Number of groups used throughout: 8, or C when C < 8.
std::size_t default_groups(std::size_t channels);

// x * sigmoid(x)
template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x);

// x * (1 + scale) + shift, where modulation is [B, 2C] = [scale | shift] broadcast over time.
template <typename Real>
Tensor<Real> scale_shift(const Tensor<Real>& x, const Tensor<Real>& modulation);

// [B, in] x [out, in]^T + bias -> [B, out]
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

// Rows of table [N, D] gathered by index -> [B, D].
template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const std::size_t> indices);

// Sample b keeps x[b] when keep[b], otherwise takes `fill` ([C]) broadcast over time.
template <typename Real>
Tensor<Real> replace_samples(const Tensor<Real>& x, const std::vector<bool>& keep,
                             const Tensor<Real>& fill);

// Nearest-neighbour repeat along time by 2.
template <typename Real>
Tensor<Real> upsample2(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x);

// mean over b of weights[b] * mean over the sample's elements of (pred - target)^2.
template <typename Real>
Tensor<Real> weighted_mse(const Tensor<Real>& pred, const Tensor<Real>& target,
                          std::span<const Real> weights);

}  // namespace lilac::ops
