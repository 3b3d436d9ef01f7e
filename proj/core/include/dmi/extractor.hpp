// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dmi/rng.hpp"
#include "dmi/tensor.hpp"

namespace dmi {

struct ExtractorConfig {
  std::size_t dim = 64;        // embedding width d
  std::size_t attn_dim = 256;  // hidden width of the attention scorer
  std::size_t interests = 4;   // K
};

/// Item embedding table plus the bias-free attention scorer
/// A = softmax(W2 tanh(W1 H^T)).
struct ExtractorParams {
  ExtractorConfig config;
  Tensor embeddings;  // (num_items + 1) x dim, row 0 is padding and stays zero
  Tensor w1;          // attn_dim x dim
  Tensor w2;          // interests x attn_dim

  /// Embeddings ~ N(0, 0.02), W1/W2 ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static ExtractorParams init(std::size_t num_items, const ExtractorConfig& config, CounterRng& rng);

  [[nodiscard]] std::vector<Tensor> parameters() const { return {embeddings, w1, w2}; }
};

struct InterestOutput {
  Tensor history;    // H, seq_len x dim
  Tensor attention;  // A, interests x seq_len; zero on padded positions
  Tensor interests;  // V = A H, interests x dim
};

/// Pads are removed from the softmax with an additive -1e9 so their
/// weights are exactly zero. Throws UsageError on an all-padding row.
InterestOutput extract(const ExtractorParams& params, std::span<const ItemId> history,
                       std::span<const std::uint8_t> mask);

/// Convenience overload for an unpadded history.
InterestOutput extract(const ExtractorParams& params, std::span<const ItemId> history);

struct InterestSelection {
  std::size_t index = 0;
  Tensor interest;               // 1 x dim, differentiable slice of V
  std::vector<real> attention;   // row `index` of A
};

/// argmax_k V[k] . target with ties going to the lowest k.
std::size_t argmax_interest(const Tensor& interests, std::span<const real> target);

InterestSelection select_interest(const InterestOutput& out, std::span<const real> target);

}  // namespace dmi
