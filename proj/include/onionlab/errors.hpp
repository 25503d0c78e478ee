// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace onionlab {

// Shape/argument violations at API boundaries.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf surfaced during forward or backward, singular matrices, divergence.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format violations, short reads, failed writes.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data generation cannot satisfy its constraints (e.g. disjointness exhausted).
struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace onionlab
