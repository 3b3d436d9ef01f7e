// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmi/training.hpp"

namespace dmi {

// File layout: one JSON header line, then every manifest array as
// little-endian float32 in manifest order. The header records the format
// version, configs, dataset digests, RNG state, fit state and an FNV-1a
// digest of the payload bytes.

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes from the start of the payload
};

struct CheckpointHeader {
  int version = 0;
  std::string json;  // the raw header line
  std::vector<ManifestEntry> manifest;
  std::uint64_t payload_digest = 0;
};

/// Writes atomically via a temporary file in the same directory.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws DataError on a missing file, version mismatch, truncated
/// payload or digest mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parses only the header line (no payload verification).
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Throws DataError when the checkpoint was trained on different item or
/// user vocabularies.
void check_compatible(const Checkpoint& ckpt, const Dataset& ds);

}  // namespace dmi
