// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dmi/data.hpp"

namespace dmi {

struct RankMetrics {
  double recall = 0;
  double hit_rate = 0;
  double ndcg = 0;
};

/// recall = |R ∩ T| / |T| (denominator is the full target count, not
/// min(N, |T|)); hit_rate = [R ∩ T non-empty]; ndcg = DCG / IDCG with
/// IDCG over min(N, |T|) ideal hits. Duplicate target ids count once.
/// Throws UsageError on empty targets or an empty list.
RankMetrics recall_hr_ndcg(std::span<const ItemId> retrieved, std::span<const ItemId> targets);

/// Number of differing coordinates. Throws DimensionError on length mismatch.
std::size_t hamming(std::span<const std::uint8_t> x, std::span<const std::uint8_t> y);

/// Multi-hot encoding of an item's categories over the map's vocabulary.
std::vector<std::uint8_t> multi_hot(const CategoryMap& cats, ItemId item);

/// Mean pairwise Hamming distance between the retrieved items' category
/// vectors. UsageError for fewer than two items.
double concentration(std::span<const ItemId> retrieved, const CategoryMap& cats);

/// Fraction of retrieved pairs whose category sets differ.
double diversity_all(std::span<const ItemId> retrieved, const CategoryMap& cats);

/// Sum over users of the number of distinct categories among their hits.
std::size_t diversity_hit(std::span<const std::vector<ItemId>> hits_per_user, const CategoryMap& cats);

struct UserMetrics {
  UserId user = 0;
  RankMetrics rank;
  std::optional<double> concentration;
  std::optional<double> diversity_all;
};

struct MetricsReport {
  std::size_t top_n = 0;
  std::size_t users = 0;
  std::size_t skipped_users = 0;  // empty target sets
  double recall = 0;
  double hit_rate = 0;
  double ndcg = 0;
  // Absent when no category map was supplied.
  std::optional<double> concentration;
  std::optional<double> diversity_all;
  std::optional<std::size_t> diversity_hit;
  std::size_t items_without_category = 0;
  std::vector<UserMetrics> per_user;
};

/// Averages per-user metrics for one cutoff. `ranked` holds each user's
/// list (at least `top_n` long unless the corpus is smaller) and is
/// truncated to `top_n` here.
MetricsReport aggregate_metrics(std::size_t top_n, std::span<const UserId> users,
                                std::span<const std::vector<ItemId>> ranked,
                                std::span<const std::vector<ItemId>> targets, const CategoryMap* cats,
                                bool keep_per_user = false);

/// `metric=value` lines; absent category metrics print as `absent`.
void write_report(std::ostream& os, const MetricsReport& report);

}  // namespace dmi
