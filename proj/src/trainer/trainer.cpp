#include "lilac/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "lilac/ops.hpp"
#include "lilac/optim.hpp"

namespace lilac {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (steps <= warmup_steps) throw ConfigError("train: steps must exceed warmup_steps");
  for (double p : {dropout_context, dropout_e, dropout_c}) {
    if (p < 0 || p > 1) throw ConfigError("train: dropout probabilities must lie in [0, 1]");
  }
  if (base_lr < 0 || min_lr < 0) throw ConfigError("train: learning rates must be >= 0");
  if (p_std < 0) throw ConfigError("train: p_std must be >= 0");
  if (grad_clip <= 0) throw ConfigError("train: grad_clip must be positive");
}

std::vector<double> condition_values(const SyntheticSample& sample, ConditionKind kind) {
  const auto chroma = chroma_from_noteroll(sample.note_roll, sample.frames, 0.0);
  switch (kind) {
    case ConditionKind::Chroma:
      return chroma.values;
    case ConditionKind::ChromaThresholded:
      return threshold_chroma(chroma).values;
    case ConditionKind::Chord:
      return encode_chords(sample.chord_truth, sample.frames).values;
  }
  return chroma.values;
}

template <typename Real>
LatentDataset<Real> build_latent_dataset(const std::vector<SyntheticSample>& samples, const LatentCodec& codec,
                                         ConditionKind kind) {
  LatentDataset<Real> data;
  data.channels = codec.channels();
  data.kind = kind;
  for (const auto& s : samples) {
    if (data.frames == 0) data.frames = s.frames;
    if (s.frames != data.frames) throw DimensionError("dataset: all samples must have the same length");
    const auto z = codec.encode(s);
    const auto ctx = codec.encode_context(s);
    const auto c = condition_values(s, kind);
    data.latents.emplace_back(z.begin(), z.end());
    data.contexts.emplace_back(ctx.begin(), ctx.end());
    data.controls.emplace_back(c.begin(), c.end());
    data.styles.push_back(s.style_id);
  }
  return data;
}

DropoutMask draw_dropout(std::size_t batch, double p_context, double p_e, double p_c, Rng& rng) {
  DropoutMask m;
  for (std::size_t b = 0; b < batch; ++b) {
    m.keep_context.push_back(!rng.bernoulli(p_context));
    m.keep_e.push_back(!rng.bernoulli(p_e));
    m.keep_c.push_back(!rng.bernoulli(p_c));
  }
  return m;
}

double sample_noise_level(Rng& rng, double p_mean, double p_std) { return std::exp(p_mean + p_std * rng.normal()); }

template <typename Real>
Batch<Real> make_batch(const LatentDataset<Real>& data, std::span<const std::size_t> indices, const DropoutMask& mask) {
  const std::size_t B = indices.size();
  if (mask.keep_context.size() != B || mask.keep_e.size() != B || mask.keep_c.size() != B) {
    throw DimensionError("make_batch: dropout mask does not match the batch");
  }
  const std::size_t C = data.channels, T = data.frames, N = data.condition_channels;
  std::vector<Real> clean(B * C * T), ctx(B * C * T), control(B * N * T, Real(0));
  Batch<Real> batch;
  batch.mask = mask;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t i = indices[b];
    if (i >= data.size()) throw ContractError("make_batch: sample index out of range");
    std::copy(data.latents[i].begin(), data.latents[i].end(), clean.begin() + static_cast<std::ptrdiff_t>(b * C * T));
    std::copy(data.contexts[i].begin(), data.contexts[i].end(), ctx.begin() + static_cast<std::ptrdiff_t>(b * C * T));
    if (mask.keep_c[b]) {
      std::copy(data.controls[i].begin(), data.controls[i].end(),
                control.begin() + static_cast<std::ptrdiff_t>(b * N * T));
    }
    batch.cond.style.push_back(mask.keep_e[b] ? data.styles[i] : -1);
  }
  batch.clean = Tensor<Real>::from({B, C, T}, std::move(clean));
  batch.cond.context = Tensor<Real>::from({B, C, T}, std::move(ctx));
  batch.cond.keep_context = mask.keep_context;
  batch.control = Tensor<Real>::from({B, N, T}, std::move(control));
  return batch;
}

template <typename Real>
Tensor<Real> conditioned_denoise(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                                 const Tensor<Real>& x, std::span<const Real> sigma, const Conditions<Real>& cond,
                                 const Tensor<Real>& control) {
  if (branch) return branch->controlled_denoise(backbone, x, sigma, cond, control);
  return backbone.denoise(x, sigma, cond);
}

template <typename Real>
Tensor<Real> edm_loss(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch, const Batch<Real>& batch,
                      std::span<const Real> sigma, const Tensor<Real>& noise) {
  const std::size_t B = batch.clean.dim(0);
  if (sigma.size() != B) throw DimensionError("edm_loss: one sigma per sample required");
  if (noise.shape() != batch.clean.shape()) throw DimensionError("edm_loss: noise shape differs from batch");
  const auto noisy = ops::add(batch.clean, ops::scale_samples<Real>(noise, sigma));
  const auto denoised = conditioned_denoise(backbone, branch, noisy, sigma, batch.cond, batch.control);
  std::vector<Real> weights(B);
  for (std::size_t b = 0; b < B; ++b) weights[b] = static_cast<Real>(EdmConstants::loss_weight(sigma[b]));
  auto loss = ops::weighted_mse<Real>(denoised, batch.clean, weights);
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw TrainingError("edm_loss: non-finite loss (sigma range " + std::to_string(sigma.front()) + "...)");
  }
  return loss;
}

template <typename Real>
Tensor<Real> edm_loss(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch, const Batch<Real>& batch,
                      Rng& rng, double p_mean, double p_std) {
  const std::size_t B = batch.clean.dim(0);
  std::vector<Real> sigma(B);
  for (auto& s : sigma) s = static_cast<Real>(sample_noise_level(rng, p_mean, p_std));
  std::vector<Real> n(batch.clean.numel());
  for (auto& v : n) v = static_cast<Real>(rng.normal());
  return edm_loss(backbone, branch, batch, std::span<const Real>(sigma), Tensor<Real>::from(batch.clean.shape(), std::move(n)));
}

template <typename Real>
Tensor<Real> cfg_denoise(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch, const Tensor<Real>& x,
                         std::span<const Real> sigma, const Conditions<Real>& cond, const Tensor<Real>& control,
                         double weight) {
  if (weight < 0) throw DomainError("cfg weight must be >= 0");
  if (weight == 1.0) return conditioned_denoise(backbone, branch, x, sigma, cond, control);
  Conditions<Real> null_cond;
  null_cond.style.assign(x.dim(0), -1);
  // Null control is the all-zero map, as seen under dropout during training.
  const Tensor<Real> null_control = control.defined() ? Tensor<Real>::zeros(control.shape()) : Tensor<Real>{};
  const auto d_null = conditioned_denoise(backbone, branch, x, sigma, null_cond, null_control);
  if (weight == 0.0) return d_null;
  const auto d_cond = conditioned_denoise(backbone, branch, x, sigma, cond, control);
  return ops::add(d_null, ops::scale(ops::sub(d_cond, d_null), static_cast<Real>(weight)));
}

template <typename Real>
Tensor<Real> generate(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                      const Conditions<Real>& cond, const Tensor<Real>& control, std::size_t batch,
                      std::size_t frames, const SamplerConfig& sampler, double cfg_weight, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t C = backbone.config().latent_channels;
  std::vector<Real> noise(batch * C * frames);
  for (auto& v : noise) v = static_cast<Real>(rng.normal());
  const DenoiserFn<Real> denoiser = [&](const Tensor<Real>& x, double sigma) {
    const std::vector<Real> s(batch, static_cast<Real>(sigma));
    return cfg_denoise(backbone, branch, x, std::span<const Real>(s), cond, control, cfg_weight);
  };
  return heun_sample<Real>(denoiser, Tensor<Real>::from({batch, C, frames}, std::move(noise)), sampler);
}

double TrainResult::initial_loss(std::size_t window) const {
  if (log.empty()) return 0;
  const std::size_t n = std::min(window, log.size());
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += log[i].loss;
  return acc / static_cast<double>(n);
}

double TrainResult::final_loss(std::size_t window) const {
  if (log.empty()) return 0;
  const std::size_t n = std::min(window, log.size());
  double acc = 0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) acc += log[i].loss;
  return acc / static_cast<double>(n);
}

namespace {

template <typename Real>
TrainResult run_training(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                         std::vector<Tensor<Real>> params, const LatentDataset<Real>& data, const TrainConfig& config,
                         const ProgressFn& progress) {
  config.validate();
  if (data.size() == 0) throw ContractError("train: empty dataset");
  LrSchedule schedule{config.base_lr, static_cast<std::int64_t>(config.warmup_steps),
                      static_cast<std::int64_t>(config.steps), config.min_lr};
  schedule.validate();
  AdamWHyper hyper;
  hyper.weight_decay = config.weight_decay;
  AdamW<Real> opt(params, hyper);
  const Rng root(config.seed);
  const double p_c = branch ? config.dropout_c : 0.0;

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= config.steps; ++step) {
    Rng rng = root.split(step);
    std::vector<std::size_t> indices(config.batch_size);
    for (auto& i : indices) i = rng.below(data.size());
    const auto mask = draw_dropout(config.batch_size, config.dropout_context, config.dropout_e, p_c, rng);
    const auto batch = make_batch(data, indices, mask);
    const auto loss = edm_loss(backbone, branch, batch, rng, config.p_mean, config.p_std);
    backward(loss);
    clip_grad_norm<Real>(params, config.grad_clip);
    const double lr = schedule.lr_at(static_cast<std::int64_t>(step));
    opt.step(lr);
    opt.zero_grad();

    TrainLogRow row;
    row.step = step;
    row.lr = lr;
    row.loss = static_cast<double>(loss.item());
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (progress) progress(row);
  }
  return result;
}

template <typename Real>
std::vector<Tensor<Real>> tensors_of(const NamedTensors<Real>& named) {
  std::vector<Tensor<Real>> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

}  // namespace

template <typename Real>
TrainResult train_backbone(Backbone<Real>& backbone, const LatentDataset<Real>& data, const TrainConfig& config,
                           const ProgressFn& progress) {
  backbone.set_requires_grad(true);
  return run_training<Real>(backbone, nullptr, tensors_of(backbone.named_parameters()), data, config, progress);
}

template <typename Real>
TrainResult train_adaptor(Backbone<Real>& backbone, AdaptorBranch<Real>& branch, const LatentDataset<Real>& data,
                          const TrainConfig& config, const ProgressFn& progress) {
  branch.check_compatible(backbone);
  if (data.condition_channels != branch.condition_channels()) {
    throw DimensionError("train_adaptor: dataset condition channels differ from the branch");
  }
  backbone.set_requires_grad(false);
  branch.set_requires_grad(true);
  return run_training<Real>(backbone, &branch, tensors_of(branch.named_parameters()), data, config, progress);
}

void write_train_log(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(10);
  os << "step,lr,loss,wall_ms\n";
  for (const auto& r : result.log) os << r.step << ',' << r.lr << ',' << r.loss << ',' << r.wall_ms << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

#define LILAC_INSTANTIATE_TRAINER(R)                                                                               \
  template LatentDataset<R> build_latent_dataset<R>(const std::vector<SyntheticSample>&, const LatentCodec&,       \
                                                    ConditionKind);                                                \
  template Batch<R> make_batch(const LatentDataset<R>&, std::span<const std::size_t>, const DropoutMask&);         \
  template Tensor<R> conditioned_denoise(const Backbone<R>&, const AdaptorBranch<R>*, const Tensor<R>&,            \
                                         std::span<const R>, const Conditions<R>&, const Tensor<R>&);              \
  template Tensor<R> edm_loss(const Backbone<R>&, const AdaptorBranch<R>*, const Batch<R>&, std::span<const R>,    \
                              const Tensor<R>&);                                                                   \
  template Tensor<R> edm_loss(const Backbone<R>&, const AdaptorBranch<R>*, const Batch<R>&, Rng&, double, double); \
  template Tensor<R> cfg_denoise(const Backbone<R>&, const AdaptorBranch<R>*, const Tensor<R>&, std::span<const R>, \
                                 const Conditions<R>&, const Tensor<R>&, double);                                  \
  template Tensor<R> generate(const Backbone<R>&, const AdaptorBranch<R>*, const Conditions<R>&, const Tensor<R>&, \
                              std::size_t, std::size_t, const SamplerConfig&, double, std::uint64_t);              \
  template TrainResult train_backbone(Backbone<R>&, const LatentDataset<R>&, const TrainConfig&, const ProgressFn&); \
  template TrainResult train_adaptor(Backbone<R>&, AdaptorBranch<R>&, const LatentDataset<R>&, const TrainConfig&, \
                                     const ProgressFn&);

LILAC_INSTANTIATE_TRAINER(float)
LILAC_INSTANTIATE_TRAINER(double)

#undef LILAC_INSTANTIATE_TRAINER

}  // namespace lilac
