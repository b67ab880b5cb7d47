#include "lilac/optim.hpp"

#include <cmath>
#include <numbers>

namespace lilac {

template <typename Real>
void adamw_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> m,
                  std::span<Real> v, std::int64_t step, const AdamWHyper& hyper, double lr) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw: parameter, gradient and moment sizes differ");
  }
  if (lr < 0) throw DomainError("adamw: negative learning rate");
  if (step < 1) throw ContractError("adamw: step counter starts at 1");
  const double b1 = hyper.beta1, b2 = hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const double decay = 1.0 - lr * hyper.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<Real>(mi);
    v[i] = static_cast<Real>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    double p = static_cast<double>(param[i]) * decay;
    p -= lr * mhat / (std::sqrt(vhat) + hyper.epsilon);
    param[i] = static_cast<Real>(p);
  }
}

template <typename Real>
AdamW<Real>::AdamW(std::vector<Tensor<Real>> params, AdamWHyper hyper) : params_(std::move(params)) {
  state_.hyper = hyper;
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ContractError("adamw: parameter does not require grad");
    state_.first_moment.emplace_back(p.numel(), Real(0));
    state_.second_moment.emplace_back(p.numel(), Real(0));
  }
}

template <typename Real>
void AdamW<Real>::step(double lr) {
  ++state_.step;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    adamw_update<Real>(p.mutable_data(), p.grad(), state_.first_moment[i], state_.second_moment[i],
                       state_.step, state_.hyper, lr);
  }
}

template <typename Real>
void AdamW<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Real>
double clip_grad_norm(std::span<Tensor<Real>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  if (norm > max_norm && norm > 0) {
    const Real f = static_cast<Real>(max_norm / norm);
    for (auto& p : params) {
      for (auto& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void LrSchedule::validate() const {
  if (warmup_steps < 0) throw ConfigError("lr schedule: warmup_steps must be >= 0");
  if (total_steps <= warmup_steps) throw ConfigError("lr schedule: total_steps must exceed warmup_steps");
  if (min_lr < 0 || base_lr < 0) throw ConfigError("lr schedule: learning rates must be >= 0");
}

double LrSchedule::lr_at(std::int64_t step) const {
  if (step < 0) throw ContractError("lr schedule: negative step");
  if (step > total_steps) return min_lr;
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                  std::span<float>, std::int64_t, const AdamWHyper&, double);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, std::int64_t, const AdamWHyper&, double);
template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(std::span<Tensor<float>>, double);
template double clip_grad_norm(std::span<Tensor<double>>, double);

}  // namespace lilac
