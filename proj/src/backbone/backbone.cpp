#include "lilac/backbone.hpp"

#include <cmath>
#include <numbers>

#include "lilac/ops.hpp"

namespace lilac {

void BackboneConfig::validate() const {
  if (levels.empty()) throw ConfigError("backbone: levels must be non-empty");
  for (auto w : levels) {
    if (w == 0) throw ConfigError("backbone: level widths must be positive");
    if (w % ops::default_groups(w) != 0) throw ConfigError("backbone: width not divisible by norm groups");
  }
  if (latent_channels < 12) throw ConfigError("backbone: latent_channels must be >= 12");
  if (blocks_per_level == 0) throw ConfigError("backbone: blocks_per_level must be >= 1");
  if (embed_dim == 0) throw ConfigError("backbone: embed_dim must be positive");
  if (num_styles == 0) throw ConfigError("backbone: num_styles must be positive");
  if (fourier_features == 0) throw ConfigError("backbone: fourier_features must be positive");
}

std::size_t BackboneConfig::block_in_channels(std::size_t block) const {
  if (block == 0) return latent_channels;
  const auto level = level_of(block);
  return opens_level(block) ? levels[level - 1] : levels[level];
}

std::size_t BackboneConfig::block_out_channels(std::size_t block) const {
  return levels[level_of(block)];
}

double EdmConstants::c_skip(double sigma) {
  return sigma_data * sigma_data / (sigma * sigma + sigma_data * sigma_data);
}
double EdmConstants::c_out(double sigma) {
  return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}
double EdmConstants::c_in(double sigma) { return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data); }
double EdmConstants::c_noise(double sigma) { return std::log(sigma) / 4.0; }
double EdmConstants::loss_weight(double sigma) {
  const double sd = sigma * sigma_data;
  return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
}

template <typename Real>
Tensor<Real> EncoderBlock<Real>::operator()(const Tensor<Real>& x, const Tensor<Real>& emb,
                                            const Tensor<Real>& context) const {
  Tensor<Real> h = x;
  if (takes_context) h = ops::concat_channels(h, context);
  if (entry) h = (*entry)(h);
  return res(h, emb);
}

template <typename Real>
void EncoderBlock<Real>::visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
  if (entry) entry->visit(prefix + ".entry", fn);
  res.visit(prefix + ".res", fn);
}

template <typename Real>
void DecoderBlock<Real>::visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
  res.visit(prefix + ".res", fn);
  if (up) up->visit(prefix + ".up", fn);
}

template <typename Real>
Backbone<Real>::Backbone(BackboneConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& cfg = config_;
  const std::size_t F = cfg.fourier_features;
  for (std::size_t k = 0; k < F; ++k) {
    const double e = F == 1 ? 0.0 : -2.0 + 6.0 * static_cast<double>(k) / static_cast<double>(F - 1);
    fourier_freqs_.push_back(static_cast<Real>(std::numbers::pi * std::pow(2.0, e)));
  }
  noise_fc1_ = Linear<Real>::random(2 * F, cfg.embed_dim, rng);
  noise_fc2_ = Linear<Real>::random(cfg.embed_dim, cfg.embed_dim, rng);
  {
    std::vector<Real> table((cfg.num_styles + 1) * cfg.embed_dim);
    for (auto& v : table) v = static_cast<Real>(rng.normal());
    style_table_ = Tensor<Real>::from({cfg.num_styles + 1, cfg.embed_dim}, std::move(table));
  }
  null_context_ = Tensor<Real>::zeros({std::max<std::size_t>(cfg.context_channels, 1)});

  for (std::size_t i = 0; i < cfg.num_blocks(); ++i) {
    EncoderBlock<Real> block;
    const auto out = cfg.block_out_channels(i);
    if (i == 0) {
      block.takes_context = cfg.context_channels > 0;
      block.entry = Conv1d<Real>::random(cfg.latent_channels + cfg.context_channels, out, 3, rng);
    } else if (cfg.block_downsamples(i)) {
      block.entry = Conv1d<Real>::random(cfg.block_in_channels(i), out, 3, rng, 2);
    }
    block.res = ResBlock<Real>::random(out, cfg.embed_dim, rng);
    encoder_.push_back(std::move(block));
  }
  mid_ = ResBlock<Real>::random(cfg.levels.back(), cfg.embed_dim, rng);
  for (std::size_t i = 0; i < cfg.num_blocks(); ++i) {
    DecoderBlock<Real> block;
    const auto width = cfg.block_out_channels(i);
    block.res = ResBlock<Real>::random(width, cfg.embed_dim, rng);
    if (cfg.block_downsamples(i)) block.up = Conv1d<Real>::random(width, cfg.block_in_channels(i), 3, rng);
    decoder_.push_back(std::move(block));
  }
  out_norm_ = GroupNorm<Real>::make(cfg.levels.front());
  out_conv_ = Conv1d<Real>::random(cfg.levels.front(), cfg.latent_channels, 3, rng);
  set_requires_grad(true);
}

template <typename Real>
Tensor<Real> Backbone<Real>::noise_embedding(std::span<const Real> c_noise) const {
  const std::size_t B = c_noise.size();
  const std::size_t F = fourier_freqs_.size();
  std::vector<Real> feats(B * 2 * F);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < F; ++k) {
      feats[b * 2 * F + k] = std::cos(fourier_freqs_[k] * c_noise[b]);
      feats[b * 2 * F + F + k] = std::sin(fourier_freqs_[k] * c_noise[b]);
    }
  }
  const auto f = Tensor<Real>::from({B, 2 * F}, std::move(feats));
  return noise_fc2_(ops::silu(noise_fc1_(f)));
}

template <typename Real>
Tensor<Real> Backbone<Real>::style_embedding(std::span<const int> style) const {
  std::vector<std::size_t> rows(style.size());
  for (std::size_t b = 0; b < style.size(); ++b) {
    if (style[b] >= static_cast<int>(config_.num_styles)) throw ContractError("style id out of range");
    rows[b] = style[b] < 0 ? config_.num_styles : static_cast<std::size_t>(style[b]);
  }
  return ops::embedding(style_table_, rows);
}

template <typename Real>
Tensor<Real> Backbone<Real>::embed(std::span<const Real> c_noise, std::span<const int> style) const {
  if (style.size() != c_noise.size()) throw DimensionError("embed: one style id per sample required");
  return ops::silu(ops::add(noise_embedding(c_noise), style_embedding(style)));
}

template <typename Real>
Tensor<Real> Backbone<Real>::context_input(const Conditions<Real>& cond, std::size_t batch,
                                           std::size_t length) const {
  const std::size_t Cc = config_.context_channels;
  if (Cc == 0) return {};
  if (!cond.context.defined()) {
    auto zeros = Tensor<Real>::zeros({batch, Cc, length});
    return ops::replace_samples(zeros, std::vector<bool>(batch, false), null_context_);
  }
  const auto& s = cond.context.shape();
  if (s.size() != 3 || s[0] != batch || s[1] != Cc || s[2] != length) {
    throw DimensionError("context must be " + shape_str({batch, Cc, length}) + ", got " + shape_str(s));
  }
  if (cond.keep_context.empty()) return cond.context;
  return ops::replace_samples(cond.context, cond.keep_context, null_context_);
}

template <typename Real>
NetworkInputs<Real> Backbone<Real>::prepare(const Tensor<Real>& scaled_x, std::span<const Real> c_noise,
                                            const Conditions<Real>& cond) const {
  const std::size_t B = scaled_x.dim(0);
  std::vector<int> style = cond.style;
  if (style.empty()) style.assign(B, -1);
  if (style.size() != B) throw DimensionError("conditions: one style id per sample required");
  return {scaled_x, embed(c_noise, style), context_input(cond, B, scaled_x.dim(2))};
}

template <typename Real>
Tensor<Real> Backbone<Real>::block_forward(std::size_t i, const Tensor<Real>& x, const Tensor<Real>& emb,
                                           const Tensor<Real>& context) const {
  return encoder_.at(i)(x, emb, context);
}

template <typename Real>
std::vector<Tensor<Real>> Backbone<Real>::encoder_forward(const Tensor<Real>& x0, const Tensor<Real>& emb,
                                                          const Tensor<Real>& context) const {
  std::vector<Tensor<Real>> feats;
  feats.reserve(encoder_.size());
  Tensor<Real> h = x0;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = encoder_[i](h, emb, context);
    feats.push_back(h);
  }
  return feats;
}

template <typename Real>
Tensor<Real> Backbone<Real>::decoder_forward(const Tensor<Real>& bottom, std::span<const Tensor<Real>> skips,
                                             const Tensor<Real>& emb) const {
  if (skips.size() != decoder_.size()) throw ConfigError("decoder: one skip per encoder block required");
  Tensor<Real> h = mid_(bottom, emb);
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    h = ops::add(h, skips[i]);
    h = decoder_[i].res(h, emb);
    if (decoder_[i].up) h = (*decoder_[i].up)(ops::upsample2(h));
  }
  return out_conv_(ops::silu(out_norm_(h)));
}

template <typename Real>
Tensor<Real> Backbone<Real>::network(const NetworkInputs<Real>& in) const {
  const auto feats = encoder_forward(in.x0, in.emb, in.context);
  return decoder_forward(feats.back(), feats, in.emb);
}

template <typename Real>
void check_denoise_inputs(const BackboneConfig& config, const Tensor<Real>& x, std::span<const Real> sigma) {
  if (x.rank() != 3 || x.dim(1) != config.latent_channels) {
    throw DimensionError("denoise: input must be [B, " + std::to_string(config.latent_channels) +
                         ", T], got " + shape_str(x.shape()));
  }
  if (x.dim(2) % config.time_divisor() != 0) {
    throw ContractError("denoise: length " + std::to_string(x.dim(2)) + " not divisible by " +
                        std::to_string(config.time_divisor()));
  }
  if (sigma.size() != x.dim(0)) throw DimensionError("denoise: one sigma per sample required");
  for (Real s : sigma) {
    if (!(s > 0)) throw DomainError("denoise: sigma must be > 0");
  }
}

template <typename Real>
Tensor<Real> edm_precondition(const Tensor<Real>& x_noisy, std::span<const Real> sigma,
                              const NetworkFn<Real>& net) {
  const std::size_t B = sigma.size();
  std::vector<Real> c_skip(B), c_out(B), c_in(B), c_noise(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double s = sigma[b];
    c_skip[b] = static_cast<Real>(EdmConstants::c_skip(s));
    c_out[b] = static_cast<Real>(EdmConstants::c_out(s));
    c_in[b] = static_cast<Real>(EdmConstants::c_in(s));
    c_noise[b] = static_cast<Real>(EdmConstants::c_noise(s));
  }
  const auto raw = net(ops::scale_samples<Real>(x_noisy, c_in), c_noise);
  return ops::add(ops::scale_samples<Real>(x_noisy, c_skip), ops::scale_samples<Real>(raw, c_out));
}

template <typename Real>
Tensor<Real> Backbone<Real>::denoise(const Tensor<Real>& x_noisy, std::span<const Real> sigma,
                                     const Conditions<Real>& cond) const {
  check_denoise_inputs(config_, x_noisy, sigma);
  return edm_precondition<Real>(x_noisy, sigma, [&](const Tensor<Real>& xin, std::span<const Real> c_noise) {
    return network(prepare(xin, c_noise, cond));
  });
}

template <typename Real>
void Backbone<Real>::visit_encoder(const TensorVisitor<Real>& fn) {
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].visit("encoder." + std::to_string(i), fn);
}

template <typename Real>
void Backbone<Real>::visit_decoder(const TensorVisitor<Real>& fn) {
  mid_.visit("mid", fn);
  for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].visit("decoder." + std::to_string(i), fn);
  out_norm_.visit("out.norm", fn);
  out_conv_.visit("out.conv", fn);
}

template <typename Real>
void Backbone<Real>::visit(const TensorVisitor<Real>& fn) {
  noise_fc1_.visit("embed.noise_fc1", fn);
  noise_fc2_.visit("embed.noise_fc2", fn);
  fn("embed.style_table", style_table_);
  fn("null_context", null_context_);
  visit_encoder(fn);
  visit_decoder(fn);
}

template <typename Real>
NamedTensors<Real> Backbone<Real>::named_parameters() {
  NamedTensors<Real> out;
  visit([&](const std::string& name, Tensor<Real>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename Real>
void Backbone<Real>::set_requires_grad(bool flag) {
  visit([flag](const std::string&, Tensor<Real>& t) { t.set_requires_grad(flag); });
}

template <typename Real>
std::size_t Backbone<Real>::parameter_count() {
  return count_elements(named_parameters());
}

std::vector<double> karras_sigmas(std::size_t n, double sigma_min, double sigma_max, double rho) {
  if (n < 2) throw ConfigError("karras_sigmas: need at least 2 levels");
  if (!(sigma_min > 0) || !(sigma_max > sigma_min)) {
    throw ConfigError("karras_sigmas: require 0 < sigma_min < sigma_max");
  }
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::pow(a + static_cast<double>(i) / static_cast<double>(n - 1) * (b - a), rho);
  }
  out.front() = sigma_max;
  out.back() = sigma_min;
  return out;
}

std::vector<double> sampler_schedule(const SamplerConfig& config) {
  if (config.steps == 0) throw ConfigError("sampler: steps must be >= 1");
  std::vector<double> s = config.steps == 1 ? std::vector<double>{config.sigma_max}
                                            : karras_sigmas(config.steps, config.sigma_min,
                                                            config.sigma_max, config.rho);
  s.push_back(0.0);
  return s;
}

template <typename Real>
Tensor<Real> heun_sample(const DenoiserFn<Real>& denoiser, const Tensor<Real>& noise,
                         const SamplerConfig& config) {
  NoGradGuard no_grad;
  const auto sigmas = sampler_schedule(config);
  std::vector<Real> x(noise.data().begin(), noise.data().end());
  for (auto& v : x) v *= static_cast<Real>(sigmas.front());
  const Shape shape = noise.shape();
  const std::size_t n = x.size();

  auto slope = [&](const std::vector<Real>& at, double sigma) {
    const auto d = denoiser(Tensor<Real>::from(shape, at), sigma);
    const auto dd = d.data();
    std::vector<Real> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Real>((at[i] - dd[i]) / sigma);
    return out;
  };

  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i) {
    const double s = sigmas[i];
    const double sn = sigmas[i + 1];
    const Real h = static_cast<Real>(sn - s);
    const auto d1 = slope(x, s);
    std::vector<Real> next(n);
    for (std::size_t j = 0; j < n; ++j) next[j] = x[j] + h * d1[j];
    if (sn != 0.0) {
      const auto d2 = slope(next, sn);
      for (std::size_t j = 0; j < n; ++j) next[j] = x[j] + h * (Real(0.5) * (d1[j] + d2[j]));
    }
    x = std::move(next);
  }
  return Tensor<Real>::from(shape, std::move(x));
}

template struct EncoderBlock<float>;
template struct EncoderBlock<double>;
template struct DecoderBlock<float>;
template struct DecoderBlock<double>;
template class Backbone<float>;
template class Backbone<double>;
template Tensor<float> edm_precondition(const Tensor<float>&, std::span<const float>, const NetworkFn<float>&);
template Tensor<double> edm_precondition(const Tensor<double>&, std::span<const double>, const NetworkFn<double>&);
template void check_denoise_inputs(const BackboneConfig&, const Tensor<float>&, std::span<const float>);
template void check_denoise_inputs(const BackboneConfig&, const Tensor<double>&, std::span<const double>);
template Tensor<float> heun_sample(const DenoiserFn<float>&, const Tensor<float>&, const SamplerConfig&);
template Tensor<double> heun_sample(const DenoiserFn<double>&, const Tensor<double>&, const SamplerConfig&);

}  // namespace lilac
