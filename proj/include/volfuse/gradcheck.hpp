// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "volfuse/tensor.hpp"

namespace volfuse {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate
/// of `x`. `x` itself is left unchanged.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Compares backward() against central differences for every coordinate of
/// every leaf in `leaves`. `loss_fn` must rebuild its graph on each call.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> leaves,
                                double h = 1e-5);

/// Ridders' method: central differences at h0, h0/2, ..., h0/2^(levels-1)
/// combined by Richardson extrapolation; returns the tableau entry with the
/// smallest error estimate over the whole tableau, so steps that straddle a
/// kink or drown in rounding are passed over. f(d) is the function at x + d.
double extrapolated_derivative(const std::function<double(double)>& f, double h0, std::size_t levels = 12);

/// check_gradients with extrapolated_derivative as the numeric side. For
/// long chains whose loss is large next to some gradient coordinates, where
/// the rounding of a single central difference dominates.
GradCheckReport check_gradients_extrapolated(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> leaves,
                                             double h0 = 5e-2, std::size_t levels = 14);

}  // namespace volfuse
