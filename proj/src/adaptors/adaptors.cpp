#include "lilac/adaptors.hpp"

#include "lilac/ops.hpp"

namespace lilac {

AdaptorVariant AdaptorVariant::parse(const std::string& name) {
  if (name == "controlnet") return controlnet();
  if (name == "h") return lilac(false, false);
  if (name == "ht") return lilac(true, false);
  if (name == "hr") return lilac(false, true);
  if (name == "htr") return lilac(true, true);
  if (name == "lilac-star") return lilac_inline();
  throw ConfigError("unknown adaptor variant '" + name + "'");
}

std::string AdaptorVariant::name() const {
  switch (kind) {
    case AdaptorKind::ControlNetClone:
      return "controlnet";
    case AdaptorKind::LiLACInline:
      return "lilac-star";
    case AdaptorKind::LiLAC:
      break;
  }
  return std::string("h") + (tail ? "t" : "") + (residual ? "r" : "");
}

std::string AdaptorVariant::label() const {
  switch (kind) {
    case AdaptorKind::ControlNetClone:
      return "ControlNet";
    case AdaptorKind::LiLACInline:
      return "LiLAC*";
    case AdaptorKind::LiLAC:
      break;
  }
  return std::string("LiLAC^H") + (tail ? "T" : "") + (residual ? "R" : "");
}

void AdaptorVariant::validate() const {
  if (kind == AdaptorKind::LiLAC && !head) throw ConfigError("LiLAC variants must include the head layer");
  if (kind == AdaptorKind::LiLACInline && !(head && tail && residual)) {
    throw ConfigError("LiLAC* uses head, tail and residual layers");
  }
}

std::vector<AdaptorVariant> all_variants() {
  return {AdaptorVariant::controlnet(),      AdaptorVariant::lilac(false, false),
          AdaptorVariant::lilac(true, false), AdaptorVariant::lilac(false, true),
          AdaptorVariant::lilac(true, true),  AdaptorVariant::lilac_inline()};
}

template <typename Real>
Conv1d<Real> identity_conv(std::size_t channels, std::size_t kernel) {
  if (kernel % 2 == 0) throw ConfigError("identity_conv: kernel size must be odd");
  auto w = Tensor<Real>::zeros({channels, channels, kernel});
  auto data = w.mutable_data();
  const std::size_t center = (kernel - 1) / 2;
  for (std::size_t c = 0; c < channels; ++c) data[(c * channels + c) * kernel + center] = Real(1);
  return {w, Tensor<Real>::zeros({channels}), 1};
}

template <typename Real>
Conv1d<Real> zero_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                       std::size_t stride) {
  if (kernel % 2 == 0) throw ConfigError("zero_conv: kernel size must be odd");
  return {Tensor<Real>::zeros({out_channels, in_channels, kernel}), Tensor<Real>::zeros({out_channels}),
          stride};
}

template <typename Real>
void LilacWrap<Real>::visit(const std::string& prefix, const TensorVisitor<Real>& fn) {
  if (head) head->visit(prefix + ".head", fn);
  if (tail) tail->visit(prefix + ".tail", fn);
  if (residual) residual->visit(prefix + ".residual", fn);
}

std::size_t ParamCensus::total() const {
  std::size_t n = 0;
  for (const auto& [name, count] : components) n += count;
  return n;
}

std::size_t ParamCensus::component(const std::string& name) const {
  for (const auto& [n, count] : components) {
    if (n == name) return count;
  }
  throw ContractError("census has no component '" + name + "'");
}

template <typename Real>
AdaptorBranch<Real>::AdaptorBranch(const Backbone<Real>& backbone, AdaptorVariant variant,
                                   std::size_t condition_channels)
    : variant_(variant), condition_channels_(condition_channels), structure_(backbone.config()) {
  variant_.validate();
  const auto& cfg = structure_;
  input_zero_ = zero_conv<Real>(condition_channels, cfg.latent_channels);
  for (std::size_t l = 0; l < cfg.num_blocks(); ++l) {
    const auto in = cfg.block_in_channels(l);
    const auto out = cfg.block_out_channels(l);
    if (variant_.kind == AdaptorKind::ControlNetClone) {
      clones_.push_back(deep_copy<Real>(backbone.encoder_block(l), true));
    } else {
      LilacWrap<Real> wrap;
      if (variant_.head) wrap.head = identity_conv<Real>(in);
      if (variant_.tail) wrap.tail = identity_conv<Real>(out);
      if (variant_.residual) wrap.residual = zero_conv<Real>(in, out, 1, cfg.block_downsamples(l) ? 2 : 1);
      wraps_.push_back(std::move(wrap));
    }
    if (variant_.kind != AdaptorKind::LiLACInline) skip_zero_.push_back(zero_conv<Real>(out, out));
  }
  set_requires_grad(true);
}

template <typename Real>
void AdaptorBranch<Real>::check_compatible(const Backbone<Real>& backbone) const {
  const auto& b = backbone.config();
  if (b.latent_channels != structure_.latent_channels || b.levels != structure_.levels ||
      b.blocks_per_level != structure_.blocks_per_level || b.context_channels != structure_.context_channels ||
      b.embed_dim != structure_.embed_dim) {
    throw ConfigError("adaptor branch was built for a different backbone structure");
  }
}

template <typename Real>
Tensor<Real> AdaptorBranch<Real>::condition_input(const Tensor<Real>& x0, const Tensor<Real>& c) const {
  if (!c.defined()) return x0;
  if (c.rank() != 3 || c.dim(0) != x0.dim(0) || c.dim(1) != condition_channels_) {
    throw DimensionError("condition must be [B, " + std::to_string(condition_channels_) + ", T], got " +
                         shape_str(c.shape()));
  }
  if (c.dim(2) != x0.dim(2)) {
    throw ContractError("condition length " + std::to_string(c.dim(2)) + " does not match latent length " +
                        std::to_string(x0.dim(2)) + "; resample the condition first");
  }
  return ops::add(x0, input_zero_(c));
}

template <typename Real>
Tensor<Real> AdaptorBranch<Real>::branch_block(const Backbone<Real>& backbone, std::size_t l,
                                               const Tensor<Real>& x, const Tensor<Real>& emb,
                                               const Tensor<Real>& context) const {
  if (variant_.kind == AdaptorKind::ControlNetClone) return clones_.at(l)(x, emb, context);
  const auto& wrap = wraps_.at(l);
  const Tensor<Real> in = wrap.head ? (*wrap.head)(x) : x;
  Tensor<Real> out = backbone.block_forward(l, in, emb, context);
  if (wrap.tail) out = (*wrap.tail)(out);
  if (wrap.residual) out = ops::add(out, (*wrap.residual)(x));
  return out;
}

template <typename Real>
std::vector<Tensor<Real>> AdaptorBranch<Real>::skip_deltas(const Backbone<Real>& backbone,
                                                           const NetworkInputs<Real>& in,
                                                           const Tensor<Real>& c) const {
  if (variant_.kind == AdaptorKind::LiLACInline) throw ContractError("LiLAC* has no separate branch");
  check_compatible(backbone);
  std::vector<Tensor<Real>> deltas;
  Tensor<Real> h = condition_input(in.x0, c);
  for (std::size_t l = 0; l < skip_zero_.size(); ++l) {
    h = branch_block(backbone, l, h, in.emb, in.context);
    deltas.push_back(skip_zero_[l](h));
  }
  return deltas;
}

template <typename Real>
std::vector<Tensor<Real>> AdaptorBranch<Real>::inline_encoder(const Backbone<Real>& backbone,
                                                              const NetworkInputs<Real>& in,
                                                              const Tensor<Real>& c) const {
  if (variant_.kind != AdaptorKind::LiLACInline) throw ContractError("inline_encoder requires LiLAC*");
  check_compatible(backbone);
  std::vector<Tensor<Real>> feats;
  Tensor<Real> h = condition_input(in.x0, c);
  for (std::size_t l = 0; l < wraps_.size(); ++l) {
    h = branch_block(backbone, l, h, in.emb, in.context);
    feats.push_back(h);
  }
  return feats;
}

template <typename Real>
Tensor<Real> AdaptorBranch<Real>::network(const Backbone<Real>& backbone, const NetworkInputs<Real>& in,
                                          const Tensor<Real>& c) const {
  if (variant_.kind == AdaptorKind::LiLACInline) {
    const auto feats = inline_encoder(backbone, in, c);
    return backbone.decoder_forward(feats.back(), feats, in.emb);
  }
  const auto feats = backbone.encoder_forward(in.x0, in.emb, in.context);
  const auto deltas = skip_deltas(backbone, in, c);
  std::vector<Tensor<Real>> skips;
  skips.reserve(feats.size());
  for (std::size_t l = 0; l < feats.size(); ++l) skips.push_back(ops::add(feats[l], deltas[l]));
  return backbone.decoder_forward(feats.back(), skips, in.emb);
}

template <typename Real>
Tensor<Real> AdaptorBranch<Real>::controlled_denoise(const Backbone<Real>& backbone, const Tensor<Real>& x_noisy,
                                                     std::span<const Real> sigma, const Conditions<Real>& cond,
                                                     const Tensor<Real>& c) const {
  check_denoise_inputs(backbone.config(), x_noisy, sigma);
  return edm_precondition<Real>(x_noisy, sigma, [&](const Tensor<Real>& xin, std::span<const Real> c_noise) {
    return network(backbone, backbone.prepare(xin, c_noise, cond), c);
  });
}

template <typename Real>
void AdaptorBranch<Real>::visit(const TensorVisitor<Real>& fn) {
  input_zero_.visit("input_zero", fn);
  for (std::size_t l = 0; l < clones_.size(); ++l) clones_[l].visit("clone." + std::to_string(l), fn);
  for (std::size_t l = 0; l < wraps_.size(); ++l) wraps_[l].visit("wrap." + std::to_string(l), fn);
  for (std::size_t l = 0; l < skip_zero_.size(); ++l) skip_zero_[l].visit("skip_zero." + std::to_string(l), fn);
}

template <typename Real>
NamedTensors<Real> AdaptorBranch<Real>::named_parameters() {
  NamedTensors<Real> out;
  visit([&](const std::string& name, Tensor<Real>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename Real>
void AdaptorBranch<Real>::set_requires_grad(bool flag) {
  visit([flag](const std::string&, Tensor<Real>& t) { t.set_requires_grad(flag); });
}

template <typename Real>
std::size_t AdaptorBranch<Real>::parameter_count() {
  return count_elements(named_parameters());
}

namespace {

// First `parts` dot-separated components of a tensor name.
std::string name_prefix(const std::string& name, std::size_t parts) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    pos = name.find('.', i == 0 ? 0 : pos + 1);
    if (pos == std::string::npos) return name;
  }
  return name.substr(0, pos);
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

void tally(ParamCensus& census, const std::string& key, std::size_t count) {
  for (auto& [name, n] : census.components) {
    if (name == key) {
      n += count;
      return;
    }
  }
  census.components.emplace_back(key, count);
}

}  // namespace

// Components: input_zero, clone.<l>, wrap.<l>.<head|tail|residual>, skip_zero.<l>.
template <typename Real>
ParamCensus AdaptorBranch<Real>::census() {
  ParamCensus census;
  visit([&](const std::string& name, Tensor<Real>& t) {
    const std::size_t parts = starts_with(name, "wrap.") ? 3 : starts_with(name, "input_zero") ? 1 : 2;
    tally(census, name_prefix(name, parts), t.numel());
  });
  return census;
}

// Components: embed, null_context, encoder.<l>, mid, decoder.<l>, out.
template <typename Real>
ParamCensus backbone_census(Backbone<Real>& backbone) {
  ParamCensus census;
  backbone.visit([&](const std::string& name, Tensor<Real>& t) {
    const bool per_block = starts_with(name, "encoder.") || starts_with(name, "decoder.");
    tally(census, name_prefix(name, per_block ? 2 : 1), t.numel());
  });
  return census;
}

template Conv1d<float> identity_conv(std::size_t, std::size_t);
template Conv1d<double> identity_conv(std::size_t, std::size_t);
template Conv1d<float> zero_conv(std::size_t, std::size_t, std::size_t, std::size_t);
template Conv1d<double> zero_conv(std::size_t, std::size_t, std::size_t, std::size_t);
template struct LilacWrap<float>;
template struct LilacWrap<double>;
template class AdaptorBranch<float>;
template class AdaptorBranch<double>;
template ParamCensus backbone_census(Backbone<float>&);
template ParamCensus backbone_census(Backbone<double>&);

}  // namespace lilac
