// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dmi/data.hpp"
#include "dmi/metrics.hpp"
#include "dmi/model.hpp"

namespace dmi {

struct InferenceOptions {
  std::uint64_t seed = 0;          // user u draws from CounterRng(seed).substream(u)
  bool deterministic_eps0 = false;  // zero every inference noise draw
};

/// K x d fused user vectors: one extraction, then an infer-mode refinement
/// of each interest. Throws UsageError on an empty history.
Tensor user_vectors(const Model& model, std::span<const ItemId> history, UserId user, const InferenceOptions& opts);

struct RetrievedItem {
  ItemId item = 0;
  real score = 0;
  std::size_t interest = 0;  // row of Z achieving the max

  friend bool operator==(const RetrievedItem&, const RetrievedItem&) = default;
};

struct RetrievalResult {
  std::vector<RetrievedItem> items;  // scores non-increasing, ties by lower id
  bool truncated = false;            // fewer than N items were available
};

/// Exhaustive max-over-interests inner-product scan of rows 1.. of
/// `embeddings`. Throws UsageError for N = 0 and DimensionError when Z and
/// the table disagree on d.
RetrievalResult topn(const Tensor& z, const Tensor& embeddings, std::size_t n,
                     std::span<const ItemId> exclude = {});

struct EvalOptions {
  std::vector<std::size_t> cutoffs = {20, 50};
  InferenceOptions inference;
  bool exclude_history = false;
  std::size_t threads = 1;
  const CategoryMap* categories = nullptr;
  bool keep_per_user = false;
};

/// One report per cutoff, all taken as prefixes of a single ranked list
/// of length max(cutoffs) per user.
std::vector<MetricsReport> evaluate_split(const Model& model, const Dataset& ds, Split split, const EvalOptions& opts);

/// Same, on precomputed examples.
std::vector<MetricsReport> evaluate_examples(const Model& model, std::span<const EvalExample> examples,
                                             const EvalOptions& opts);

}  // namespace dmi
