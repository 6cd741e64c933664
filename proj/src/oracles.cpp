// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace volfuse::oracle {

namespace {

double directed(const std::vector<Point3>& from, const std::vector<Point3>& to) {
  double acc = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double diff = p(k) - q(k);
        d += diff * diff;
      }
      if (d < best) best = d;
    }
    acc += best;
  }
  return acc / static_cast<double>(from.size());
}

}  // namespace

double chamfer_brute_force(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_brute_force: empty set");
  return directed(a, b) + directed(b, a);
}

long double bce_direct(const std::vector<double>& logits, const std::vector<double>& labels) {
  if (logits.size() != labels.size() || logits.empty()) throw std::invalid_argument("bce_direct: size mismatch");
  long double acc = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double x = logits[i];
    const long double s = 1.0L / (1.0L + std::exp(-x));
    acc -= labels[i] * std::log(s) + (1.0L - labels[i]) * std::log(1.0L - s);
  }
  return acc / static_cast<long double>(logits.size());
}

}  // namespace volfuse::oracle
