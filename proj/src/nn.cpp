// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/nn.hpp"

#include <cmath>

namespace volfuse {

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(data), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool bias) {
  Linear l;
  l.w = uniform_param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (bias) l.b = Tensor::zeros({out}, true);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool bias) {
  Linear l;
  l.w = Tensor::zeros({in, out}, true);
  if (bias) l.b = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  if (b.defined()) return linear(x, w, b);
  return matmul(x, w);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".w", w);
  if (b.defined()) out.emplace_back(prefix + ".b", b);
}

LayerNormParams LayerNormParams::init(std::size_t width) {
  return {Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true)};
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

}  // namespace volfuse
