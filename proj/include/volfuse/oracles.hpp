// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used to cross-check the differentiable losses.
// They share no code with the tensor library.

#pragma once

#include <vector>

#include "volfuse/geometry.hpp"

namespace volfuse::oracle {

/// Double loop over both sets, squared distances accumulated x, y, z.
double chamfer_brute_force(const std::vector<Point3>& a, const std::vector<Point3>& b);

/// -mean(y log(sigmoid(x)) + (1-y) log(1 - sigmoid(x))) in long double.
long double bce_direct(const std::vector<double>& logits, const std::vector<double>& labels);

}  // namespace volfuse::oracle
