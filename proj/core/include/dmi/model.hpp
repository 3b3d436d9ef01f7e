// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dmi/diffusion.hpp"
#include "dmi/extractor.hpp"

namespace dmi {

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t steps = 5;  // T
  double noise_scale = 1.0;
  double alpha_min = 1e-4;
  double alpha_max = 1e-3;
  std::size_t heads = 2;
  std::size_t ff_dim = 256;
  bool use_transformer = true;
  RefineConfig refine;

  [[nodiscard]] DenoiserConfig denoiser_config() const;
};

/// Extractor, denoiser and schedule. The denoiser is always allocated so
/// checkpoints have one layout; it is trained only with use_diffusion.
struct Model {
  ModelConfig config;
  ExtractorParams extractor;
  DenoiserParams denoiser;
  NoiseSchedule schedule;

  static Model init(std::size_t num_items, const ModelConfig& config, CounterRng& rng);

  /// Deep copy; the result shares no storage with *this.
  [[nodiscard]] Model clone() const;

  [[nodiscard]] std::size_t num_items() const { return extractor.embeddings.rows() - 1; }

  /// Parameters updated by the optimizer.
  [[nodiscard]] std::vector<Tensor> trainable() const;

  /// Every stored array with its checkpoint name, in manifest order.
  [[nodiscard]] std::vector<Tensor> arrays() const;
  [[nodiscard]] std::vector<std::string> array_names() const;
};

}  // namespace dmi
