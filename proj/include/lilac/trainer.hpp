#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lilac/adaptors.hpp"
#include "lilac/backbone.hpp"
#include "lilac/conditions.hpp"
#include "lilac/rng.hpp"
#include "lilac/synthetic.hpp"

namespace lilac {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  double base_lr = 1e-4;
  std::size_t warmup_steps = 100;
  double min_lr = 0.0;
  double weight_decay = 0.01;
  double dropout_context = 0.5;
  double dropout_e = 0.5;
  double dropout_c = 0.5;
  double p_mean = -1.2;
  double p_std = 1.2;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Training tensors pre-encoded through the latent codec.
template <typename Real>
struct LatentDataset {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t condition_channels = kPitchClasses;
  ConditionKind kind = ConditionKind::Chroma;
  std::vector<std::vector<Real>> latents;   // C x T
  std::vector<std::vector<Real>> contexts;  // C x T
  std::vector<std::vector<Real>> controls;  // 12 x T
  std::vector<int> styles;

  std::size_t size() const { return latents.size(); }
};

// The control map a sample contributes for a given condition kind.
std::vector<double> condition_values(const SyntheticSample& sample, ConditionKind kind);

template <typename Real>
LatentDataset<Real> build_latent_dataset(const std::vector<SyntheticSample>& samples, const LatentCodec& codec,
                                         ConditionKind kind);

// Independent per-sample, per-condition keep flags.
struct DropoutMask {
  std::vector<bool> keep_context;
  std::vector<bool> keep_e;
  std::vector<bool> keep_c;
};

DropoutMask draw_dropout(std::size_t batch, double p_context, double p_e, double p_c, Rng& rng);

// sigma = exp(p_mean + p_std * z), z ~ N(0, 1).
double sample_noise_level(Rng& rng, double p_mean = -1.2, double p_std = 1.2);

template <typename Real>
struct Batch {
  Tensor<Real> clean;    // [B, C, T]
  Conditions<Real> cond; // style + context with keep flags
  Tensor<Real> control;  // [B, 12, T]; dropped samples are all zero
  DropoutMask mask;
};

// Gathers samples and applies the dropout mask: dropped e -> null style,
// dropped context -> learned null context, dropped c -> all-zero map.
template <typename Real>
Batch<Real> make_batch(const LatentDataset<Real>& data, std::span<const std::size_t> indices,
                       const DropoutMask& mask);

// mean_b lambda(sigma_b) * mean((D(x_b + sigma_b n_b; sigma_b) - x_b)^2) with explicit noise.
template <typename Real>
Tensor<Real> edm_loss(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch, const Batch<Real>& batch,
                      std::span<const Real> sigma, const Tensor<Real>& noise);

// Same, drawing sigma and noise from rng.
template <typename Real>
Tensor<Real> edm_loss(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch, const Batch<Real>& batch,
                      Rng& rng, double p_mean = -1.2, double p_std = 1.2);

// Denoiser with the adaptor attached when branch != nullptr.
template <typename Real>
Tensor<Real> conditioned_denoise(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                                 const Tensor<Real>& x, std::span<const Real> sigma, const Conditions<Real>& cond,
                                 const Tensor<Real>& control);

// D_null + w (D_cond - D_null); D_null drops style, context and control together.
template <typename Real>
Tensor<Real> cfg_denoise(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch, const Tensor<Real>& x,
                         std::span<const Real> sigma, const Conditions<Real>& cond, const Tensor<Real>& control,
                         double weight);

// Batch of generated latents [B, C, T] from seeded noise.
template <typename Real>
Tensor<Real> generate(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                      const Conditions<Real>& cond, const Tensor<Real>& control, std::size_t batch,
                      std::size_t frames, const SamplerConfig& sampler, double cfg_weight, std::uint64_t seed);

struct TrainLogRow {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  double wall_ms = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  // Mean loss over the first / last `window` steps.
  double initial_loss(std::size_t window = 100) const;
  double final_loss(std::size_t window = 100) const;
};

using ProgressFn = std::function<void(const TrainLogRow&)>;

// Pre-trains every backbone parameter; context and style are dropped per TrainConfig.
template <typename Real>
TrainResult train_backbone(Backbone<Real>& backbone, const LatentDataset<Real>& data, const TrainConfig& config,
                           const ProgressFn& progress = {});

// Trains only the branch; backbone parameters are frozen (no gradient) for the whole run.
template <typename Real>
TrainResult train_adaptor(Backbone<Real>& backbone, AdaptorBranch<Real>& branch, const LatentDataset<Real>& data,
                          const TrainConfig& config, const ProgressFn& progress = {});

// CSV with columns step,lr,loss,wall_ms.
void write_train_log(const std::filesystem::path& path, const TrainResult& result);

}  // namespace lilac
