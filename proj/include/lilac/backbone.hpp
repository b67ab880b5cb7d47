#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lilac/layers.hpp"
#include "lilac/rng.hpp"
#include "lilac/tensor.hpp"

namespace lilac {

struct BackboneConfig {
  std::size_t latent_channels = 16;
  std::vector<std::size_t> levels{16, 32, 64};
  std::size_t blocks_per_level = 1;
  std::size_t embed_dim = 64;
  std::size_t context_channels = 16;
  std::size_t num_styles = 3;
  std::size_t fourier_features = 16;
  double frame_rate_hz = 11.7;  // metadata only

  void validate() const;
  std::size_t num_blocks() const { return levels.size() * blocks_per_level; }
  std::size_t level_of(std::size_t block) const { return block / blocks_per_level; }
  bool opens_level(std::size_t block) const { return block % blocks_per_level == 0; }
  // Channel count entering / leaving encoder block `block`.
  std::size_t block_in_channels(std::size_t block) const;
  std::size_t block_out_channels(std::size_t block) const;
  // Time downsampling factor at the input of `block` (1 for block 0).
  bool block_downsamples(std::size_t block) const { return opens_level(block) && level_of(block) > 0; }
  // Required divisor of the sequence length.
  std::size_t time_divisor() const { return std::size_t{1} << (levels.size() - 1); }
};

// EDM preconditioning with sigma_data = 0.5.
struct EdmConstants {
  static constexpr double sigma_data = 0.5;
  static double c_skip(double sigma);
  static double c_out(double sigma);
  static double c_in(double sigma);
  static double c_noise(double sigma);
  // Loss weight (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.
  static double loss_weight(double sigma);
};

// Per-batch conditioning seen by the backbone. A style of -1 means "dropped":
// the learned null style row is used. Context samples with keep_context[b] == false
// take the learned null context. An undefined context tensor means every sample is null.
template <typename Real>
struct Conditions {
  std::vector<int> style;
  Tensor<Real> context;  // [B, context_channels, T]
  std::vector<bool> keep_context;
};

// Encoder block F_l: optional entry convolution (input projection with context
// concatenation for block 0, stride-2 downsampling at later level boundaries)
// followed by a residual block.
template <typename Real>
struct EncoderBlock {
  std::optional<Conv1d<Real>> entry;
  bool takes_context = false;
  ResBlock<Real> res;

  Tensor<Real> operator()(const Tensor<Real>& x, const Tensor<Real>& emb, const Tensor<Real>& context) const;
  void visit(const std::string& prefix, const TensorVisitor<Real>& fn);
};

template <typename Real>
struct DecoderBlock {
  ResBlock<Real> res;
  std::optional<Conv1d<Real>> up;  // applied after nearest x2 upsampling

  void visit(const std::string& prefix, const TensorVisitor<Real>& fn);
};

// The network input to the encoder, after preconditioning: c_in * x_noisy.
// Everything an adaptor needs to run alongside the backbone.
template <typename Real>
struct NetworkInputs {
  Tensor<Real> x0;       // [B, C, T]
  Tensor<Real> emb;      // [B, embed_dim]
  Tensor<Real> context;  // [B, context_channels, T], nulls already substituted
};

// Desk-scale 1-D U-Net denoiser with EDM preconditioning.
template <typename Real>
class Backbone {
 public:
  Backbone(BackboneConfig config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  // CondEmbedding: silu(MLP(fourier(c_noise)) + style_table[style or null]).
  Tensor<Real> embed(std::span<const Real> c_noise, std::span<const int> style) const;
  Tensor<Real> noise_embedding(std::span<const Real> c_noise) const;
  Tensor<Real> style_embedding(std::span<const int> style) const;
  Tensor<Real> context_input(const Conditions<Real>& cond, std::size_t batch, std::size_t length) const;
  NetworkInputs<Real> prepare(const Tensor<Real>& scaled_x, std::span<const Real> c_noise,
                              const Conditions<Real>& cond) const;

  const EncoderBlock<Real>& encoder_block(std::size_t i) const { return encoder_.at(i); }
  Tensor<Real> block_forward(std::size_t i, const Tensor<Real>& x, const Tensor<Real>& emb,
                             const Tensor<Real>& context) const;
  // Outputs x_l of every encoder block, in order.
  std::vector<Tensor<Real>> encoder_forward(const Tensor<Real>& x0, const Tensor<Real>& emb,
                                            const Tensor<Real>& context) const;
  // Middle block on `bottom`, then the decoder consuming skips[i] (added) in reverse order.
  Tensor<Real> decoder_forward(const Tensor<Real>& bottom, std::span<const Tensor<Real>> skips,
                               const Tensor<Real>& emb) const;
  // Raw network NN(c_in x, c_noise, e, context).
  Tensor<Real> network(const NetworkInputs<Real>& in) const;

  // D(x; sigma) = c_skip x + c_out NN(c_in x, c_noise, e, context).
  Tensor<Real> denoise(const Tensor<Real>& x_noisy, std::span<const Real> sigma,
                       const Conditions<Real>& cond) const;

  void visit(const TensorVisitor<Real>& fn);
  void visit_encoder(const TensorVisitor<Real>& fn);
  void visit_decoder(const TensorVisitor<Real>& fn);
  NamedTensors<Real> named_parameters();
  void set_requires_grad(bool flag);
  std::size_t parameter_count();

 private:
  BackboneConfig config_;
  std::vector<Real> fourier_freqs_;
  Linear<Real> noise_fc1_;
  Linear<Real> noise_fc2_;
  Tensor<Real> style_table_;   // [num_styles + 1, embed_dim]; last row is the null style
  Tensor<Real> null_context_;  // [context_channels]
  std::vector<EncoderBlock<Real>> encoder_;
  ResBlock<Real> mid_;
  std::vector<DecoderBlock<Real>> decoder_;  // decoder_[i] pairs with encoder block i
  GroupNorm<Real> out_norm_;
  Conv1d<Real> out_conv_;
};

// D(x) = c_skip x + c_out net(c_in x, c_noise), applied per sample.
template <typename Real>
using NetworkFn = std::function<Tensor<Real>(const Tensor<Real>& scaled_x, std::span<const Real> c_noise)>;

template <typename Real>
Tensor<Real> edm_precondition(const Tensor<Real>& x_noisy, std::span<const Real> sigma,
                              const NetworkFn<Real>& net);

// Checks sigma > 0 and the length contract; throws DomainError / ContractError.
template <typename Real>
void check_denoise_inputs(const BackboneConfig& config, const Tensor<Real>& x,
                          std::span<const Real> sigma);

// sigma_i = (smax^(1/rho) + i/(n-1) (smin^(1/rho) - smax^(1/rho)))^rho, i = 0..n-1.
std::vector<double> karras_sigmas(std::size_t n, double sigma_min, double sigma_max, double rho = 7.0);

struct SamplerConfig {
  std::size_t steps = 30;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
};

// Noise levels visited by the sampler, ending with 0. steps == 1 gives {sigma_max, 0}.
std::vector<double> sampler_schedule(const SamplerConfig& config);

// Denoiser at a single noise level shared by the whole batch.
template <typename Real>
using DenoiserFn = std::function<Tensor<Real>(const Tensor<Real>& x, double sigma)>;

// Deterministic Heun integration of the probability-flow ODE, starting from
// sigma_max * noise. The last step (to sigma = 0) is a plain Euler step.
template <typename Real>
Tensor<Real> heun_sample(const DenoiserFn<Real>& denoiser, const Tensor<Real>& noise,
                         const SamplerConfig& config);

}  // namespace lilac
