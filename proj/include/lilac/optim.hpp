#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lilac/tensor.hpp"

namespace lilac {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Per-parameter moment buffers plus the shared step counter.
template <typename Real>
struct OptimizerState {
  AdamWHyper hyper;
  std::int64_t step = 0;
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
};

// One AdamW update of a single parameter buffer at (1-based) step `step`.
// Decoupled decay: p <- p - lr*wd*p, then the bias-corrected adaptive step.
template <typename Real>
void adamw_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> m,
                  std::span<Real> v, std::int64_t step, const AdamWHyper& hyper, double lr);

template <typename Real>
class AdamW {
 public:
  AdamW(std::vector<Tensor<Real>> params, AdamWHyper hyper = {});

  // Applies one update using the gradients currently stored on the parameters.
  void step(double lr);
  void zero_grad();

  const OptimizerState<Real>& state() const { return state_; }
  const std::vector<Tensor<Real>>& params() const { return params_; }

 private:
  std::vector<Tensor<Real>> params_;
  OptimizerState<Real> state_;
};

// Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename Real>
double clip_grad_norm(std::span<Tensor<Real>> params, double max_norm);

// Linear warmup from 0 to base_lr, then cosine annealing down to min_lr at total_steps.
struct LrSchedule {
  double base_lr = 1e-4;
  std::int64_t warmup_steps = 100;
  std::int64_t total_steps = 2000;
  double min_lr = 0.0;

  void validate() const;
  // Steps beyond total_steps return min_lr.
  double lr_at(std::int64_t step) const;
};

}  // namespace lilac
