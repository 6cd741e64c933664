// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/optim.hpp"

#include <cmath>
#include <numbers>

#include "volfuse/errors.hpp"

namespace volfuse {

double learning_rate(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (step < cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (total_steps <= cfg.warmup_steps) return cfg.base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(total_steps - cfg.warmup_steps));
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                std::size_t step, double lr, const OptimizerConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw NumericError("adamw_step: parameter, gradient and moment sizes differ");
  }
  const double t = static_cast<double>(step + 1);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] = param[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

AdamW::AdamW(OptimizerConfig cfg, ParamList params) : cfg_(cfg), params_(std::move(params)) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(std::size_t step, double lr) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    grads.push_back(t.grad());
    for (double g : grads.back()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient at step " + std::to_string(step) + " in " + name);
      }
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].second;
    adamw_step(t.mutable_data(), grads[i], m_[i], v_[i], step, lr, cfg_);
  }
}

double AdamW::grad_norm() const {
  double acc = 0.0;
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace volfuse
