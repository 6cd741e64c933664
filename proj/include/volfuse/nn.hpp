// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "volfuse/random.hpp"
#include "volfuse/tensor.hpp"

namespace volfuse {

using NamedTensor = std::pair<std::string, Tensor>;
using ParamList = std::vector<NamedTensor>;

/// Trainable leaf drawn from uniform(-bound, bound).
Tensor uniform_param(Shape shape, double bound, Rng& rng);

/// Affine map x * w + b with w of shape (in, out).
struct Linear {
  Tensor w;
  Tensor b;  // may be undefined (no bias)

  /// Weights uniform(+-1/sqrt(in)), bias zero.
  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  /// All-zero weights and bias; still trainable.
  static Linear zeros(std::size_t in, std::size_t out, bool bias = true);

  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return w.dim(0); }
  std::size_t out() const { return w.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams init(std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace volfuse
