// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "volfuse/config.hpp"
#include "volfuse/nn.hpp"

namespace volfuse {

/// Linear warmup from 0 over `warmup_steps`, then cosine annealing from
/// base_lr to 0 at `total_steps`.
double learning_rate(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps);

/// One AdamW update of a single tensor with decoupled weight decay:
///   p <- p (1 - lr wd);  m, v <- moments;  p <- p - lr mhat / (sqrt(vhat) + eps)
/// Bias correction uses t = step + 1.
void adamw_step(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                std::size_t step, double lr, const OptimizerConfig& cfg);

/// AdamW over a fixed parameter list, reading each tensor's grad().
class AdamW {
 public:
  AdamW(OptimizerConfig cfg, ParamList params);

  /// Throws NumericError naming the step and parameter when any gradient is
  /// non-finite; no parameter is touched in that case.
  void step(std::size_t step, double lr);
  /// L2 norm over all current gradients.
  double grad_norm() const;
  void zero_grad();

  const ParamList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  OptimizerConfig cfg_;
  ParamList params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace volfuse
