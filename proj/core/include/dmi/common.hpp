// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dmi {

// Compute precision. 32-bit by default; the `dmi_core_f64` target defines
// DMI_REAL_DOUBLE so gradient checks can run at tight tolerances.
#ifdef DMI_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

using ItemId = std::int32_t;
using UserId = std::int32_t;

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// 64-bit FNV-1a over raw bytes, chainable through `h`.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Error classes map onto distinct CLI exit codes (see tools/dmi_main.cpp).

/// Tensor shapes that cannot be combined.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse: calling an operation outside its preconditions.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad hyperparameters or config keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed input data, including checkpoints.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during training or inference.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dmi
