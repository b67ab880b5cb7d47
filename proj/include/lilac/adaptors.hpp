#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lilac/backbone.hpp"
#include "lilac/layers.hpp"

namespace lilac {

enum class AdaptorKind { ControlNetClone, LiLAC, LiLACInline };

// Which adaptor to attach. head/tail/residual apply to the LiLAC kinds only;
// LiLAC requires head, LiLACInline always uses all three.
struct AdaptorVariant {
  AdaptorKind kind = AdaptorKind::LiLAC;
  bool head = true;
  bool tail = false;
  bool residual = false;

  static AdaptorVariant controlnet() { return {AdaptorKind::ControlNetClone, false, false, false}; }
  static AdaptorVariant lilac(bool tail, bool residual) { return {AdaptorKind::LiLAC, true, tail, residual}; }
  static AdaptorVariant lilac_inline() { return {AdaptorKind::LiLACInline, true, true, true}; }

  // CLI names: controlnet, h, ht, hr, htr, lilac-star.
  static AdaptorVariant parse(const std::string& name);
  std::string name() const;
  // Display label as used in reports: ControlNet, LiLAC^H, ..., LiLAC*.
  std::string label() const;
  void validate() const;

  bool operator==(const AdaptorVariant&) const = default;
};

// All six variants in reporting order.
std::vector<AdaptorVariant> all_variants();

// Identity convolution: bias 0, W[o, i, k] = 1 iff k == (K-1)/2 and o == i.
template <typename Real>
Conv1d<Real> identity_conv(std::size_t channels, std::size_t kernel = 1);

// Zero convolution: every weight and bias exactly 0.
template <typename Real>
Conv1d<Real> zero_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel = 1,
                       std::size_t stride = 1);

// The three optional LiLAC layers around frozen encoder block l.
template <typename Real>
struct LilacWrap {
  std::optional<Conv1d<Real>> head;      // identity, C_in -> C_in
  std::optional<Conv1d<Real>> tail;      // identity, C_out -> C_out
  std::optional<Conv1d<Real>> residual;  // zero, C_in -> C_out (stride 2 when the block downsamples)

  void visit(const std::string& prefix, const TensorVisitor<Real>& fn);
};

struct ParamCensus {
  std::vector<std::pair<std::string, std::size_t>> components;
  std::size_t total() const;
  std::size_t component(const std::string& name) const;
};

// Trainable control pathway attached to a frozen backbone. Owns only its own
// tensors; the backbone is passed in by const reference on every call.
template <typename Real>
class AdaptorBranch {
 public:
  AdaptorBranch(const Backbone<Real>& backbone, AdaptorVariant variant, std::size_t condition_channels = 12);

  const AdaptorVariant& variant() const { return variant_; }
  std::size_t condition_channels() const { return condition_channels_; }

  // x0 + Z_in(c). An undefined c is the null (all-zero) condition and returns x0.
  Tensor<Real> condition_input(const Tensor<Real>& x0, const Tensor<Real>& c) const;

  // Control-branch block l: G_l for ControlNet, I_t(F_l(I_h(x), e)) + Z_r(x) for LiLAC kinds.
  Tensor<Real> branch_block(const Backbone<Real>& backbone, std::size_t l, const Tensor<Real>& x,
                            const Tensor<Real>& emb, const Tensor<Real>& context) const;

  // Per-block skip deltas delta_l = Z_s,l(x_hat_l). Not available for LiLACInline.
  std::vector<Tensor<Real>> skip_deltas(const Backbone<Real>& backbone, const NetworkInputs<Real>& in,
                                        const Tensor<Real>& c) const;

  // Single-stream encoder of LiLACInline: x_l = I_t(F_l(I_h(x_{l-1}), e)) + Z_r(x_{l-1}).
  std::vector<Tensor<Real>> inline_encoder(const Backbone<Real>& backbone, const NetworkInputs<Real>& in,
                                           const Tensor<Real>& c) const;

  // Backbone network with every decoder skip s_l = F_l(x_{l-1}, e) + delta_l
  // (or the inline encoder for LiLACInline).
  Tensor<Real> network(const Backbone<Real>& backbone, const NetworkInputs<Real>& in, const Tensor<Real>& c) const;

  // EDM-preconditioned denoiser with the branch attached. c: [B, N, T] or undefined.
  Tensor<Real> controlled_denoise(const Backbone<Real>& backbone, const Tensor<Real>& x_noisy,
                                  std::span<const Real> sigma, const Conditions<Real>& cond,
                                  const Tensor<Real>& c) const;

  // Throws ConfigError unless this branch was built for a backbone with the same structure.
  void check_compatible(const Backbone<Real>& backbone) const;

  void visit(const TensorVisitor<Real>& fn);
  NamedTensors<Real> named_parameters();
  void set_requires_grad(bool flag);
  std::size_t parameter_count();
  ParamCensus census();

 private:
  AdaptorVariant variant_;
  std::size_t condition_channels_;
  BackboneConfig structure_;
  Conv1d<Real> input_zero_;
  std::vector<EncoderBlock<Real>> clones_;
  std::vector<LilacWrap<Real>> wraps_;
  std::vector<Conv1d<Real>> skip_zero_;
};

template <typename Real>
ParamCensus backbone_census(Backbone<Real>& backbone);

}  // namespace lilac
