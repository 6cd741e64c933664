// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

// Self-checks run by `volfuse check`: gradient checks, oracle comparisons and
// structural invariants, all at tiny scale.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volfuse/config.hpp"
#include "volfuse/scenegen.hpp"

namespace volfuse {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<std::string> check_names();

/// Runs every check whose name starts with `prefix` (all when empty). A check
/// that throws is reported as failed with the message in `detail`.
std::vector<CheckResult> run_checks(std::uint64_t seed, const std::string& prefix = "");

/// 8 x 8 m scene, one 16 x 16 px camera, a coarse LiDAR.
SceneSpec tiny_scene_spec(std::uint64_t seed);
/// 4 x 4 x 2 grid, width 8, one block everywhere; matches tiny_scene_spec.
RunConfig tiny_run_config();

}  // namespace volfuse
