// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>

namespace volfuse {

/// Invalid configuration value or combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that cannot be processed (e.g. no in-range points).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file or document.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace volfuse
