// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dmi/data.hpp"
#include "dmi/training.hpp"

namespace dmi {

/// Every knob of a run. Text form is one `section.key = value` per line;
/// `#` starts a comment.
struct RunConfig {
  std::string ablation = "dmi";  // dmi | dmi-diff | dmi-t | dmi-ip | dmi-gd
  std::uint64_t seed = 0;
  std::string data_path;  // required by train/eval/retrieve
  std::string categories_path;
  IngestOptions ingest;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::size_t> eval_cutoffs = {20, 50};
  Split eval_split = Split::kTest;
  bool deterministic_eps0 = false;
  bool exclude_history = false;
  std::size_t threads = 1;
  std::string output_dir = "out";
};

/// All recognised keys in canonical order.
const std::vector<std::string>& config_keys();

/// Sets one key from its text value; ConfigError names the key on an
/// unknown key or an unparsable value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Forces the switches of `cfg.ablation`; ConfigError for an unknown name.
void apply_ablation(RunConfig& cfg);

/// Parses `key = value` text, then `overrides` (`key=value`), then applies
/// the ablation preset and propagates the seed. `source` labels errors.
RunConfig parse_run_config(std::string_view text, const std::vector<std::string>& overrides = {},
                           const std::string& source = "<config>");

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Fully resolved config, one line per key, re-parseable.
std::string format_run_config(const RunConfig& cfg);

/// Throws ConfigError("missing required key 'data.path'") when unset.
void require_data_path(const RunConfig& cfg);

}  // namespace dmi
