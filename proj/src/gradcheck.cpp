// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace volfuse {

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw NumericError("finite_difference_grad: step must be positive");
  Tensor probe = x.detach();
  auto values = probe.mutable_data();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(probe);
    values[i] = saved - h;
    const double down = f(probe);
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(grad));
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

// Runs backward once, then compares each coordinate against `numeric(eval)`,
// where eval(d) is the loss with the coordinate shifted by d.
GradCheckReport compare_coordinates(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor>& leaves,
                                    const std::function<double(const std::function<double(double)>&)>& numeric) {
  for (auto& [name, t] : leaves) t.zero_grad();
  backward(loss_fn());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (auto& [name, leaf] : leaves) {
    const std::vector<double> analytic = leaf.grad();
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      const double estimate = numeric([&](double d) {
        values[i] = saved + d;
        const double y = loss_fn().item();
        values[i] = saved;
        return y;
      });
      const double err = relative_error(analytic[i], estimate);
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_input = name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = estimate;
      }
    }
  }
  return report;
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> leaves, double h) {
  if (!(h > 0.0)) throw NumericError("check_gradients: step must be positive");
  return compare_coordinates(loss_fn, leaves,
                             [h](const std::function<double(double)>& f) { return (f(h) - f(-h)) / (2.0 * h); });
}

double extrapolated_derivative(const std::function<double(double)>& f, double h0, std::size_t levels) {
  if (!(h0 > 0.0) || levels == 0) throw NumericError("extrapolated_derivative: need h0 > 0 and levels >= 1");
  constexpr double kShrink = 2.0, kShrink2 = kShrink * kShrink;
  // A forward pass is trusted to a few ulps of its value; a difference
  // quotient at step h inherits that divided by h.
  constexpr double kUlps = 8.0;
  double scale = 0.0;
  auto central = [&](double h) {
    const double up = f(h), down = f(-h);
    scale = std::max({scale, std::abs(up), std::abs(down)});
    return (up - down) / (2.0 * h);
  };
  // table[j][i]: j extrapolation steps applied to the central difference at h0 / 2^i.
  std::vector<std::vector<double>> table(levels, std::vector<double>(levels, 0.0));
  double h = h0;
  table[0][0] = central(h);
  double best = table[0][0];
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < levels; ++i) {
    h /= kShrink;
    table[0][i] = central(h);
    const double rounding = kUlps * std::numeric_limits<double>::epsilon() * scale / h;
    double fac = kShrink2;
    for (std::size_t j = 1; j <= i; ++j) {
      table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double err = rounding + std::max(std::abs(table[j][i] - table[j - 1][i]),
                                             std::abs(table[j][i] - table[j - 1][i - 1]));
      if (err <= best_err) {
        best_err = err;
        best = table[j][i];
      }
    }
  }
  return best;
}

GradCheckReport check_gradients_extrapolated(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> leaves,
                                             double h0, std::size_t levels) {
  return compare_coordinates(loss_fn, leaves, [h0, levels](const std::function<double(double)>& f) {
    return extrapolated_derivative(f, h0, levels);
  });
}

}  // namespace volfuse
