// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmi/common.hpp"
#include "dmi/rng.hpp"

namespace dmi {

inline constexpr ItemId kPaddingItem = 0;

struct InteractionRecord {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
};

enum class Split : std::uint8_t { kTrain, kValid, kTest };

const char* to_string(Split s);
Split parse_split(const std::string& name);

struct IngestOptions {
  std::size_t filter_min = 5;
  std::size_t max_seq_len = 20;
  bool dedupe = false;  // drop repeated consecutive interactions per user
};

/// Filtered, indexed interaction corpus. Item ids are dense in
/// [1, num_items]; id 0 is padding. User ids are dense in [0, num_users).
struct Dataset {
  std::vector<std::string> item_tokens;  // item_tokens[0] is the padding token
  std::vector<std::string> user_tokens;
  std::unordered_map<std::string, ItemId> item_index;
  std::unordered_map<std::string, UserId> user_index;
  std::vector<std::vector<ItemId>> sequences;  // time-ascending, untruncated
  std::vector<Split> splits;                   // all kTrain until split_users()
  std::size_t max_seq_len = 20;

  [[nodiscard]] std::size_t num_items() const { return item_tokens.size() - 1; }
  [[nodiscard]] std::size_t num_users() const { return user_tokens.size(); }
  [[nodiscard]] std::size_t num_interactions() const;
  [[nodiscard]] std::vector<UserId> users_in(Split s) const;

  /// FNV-1a digests of the ordered token lists; checkpoints pin these.
  [[nodiscard]] std::uint64_t item_digest() const;
  [[nodiscard]] std::uint64_t user_digest() const;
};

/// Parses a `user<TAB>item<TAB>timestamp` log. Throws DataError naming
/// the line on malformed input.
std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path);

/// Indexes records: optional dedupe, iterative item/user frequency
/// filtering to a fixpoint, stable time sort, and removal of users left
/// with fewer than two interactions.
Dataset build_dataset(const std::vector<InteractionRecord>& records, const IngestOptions& options);

Dataset ingest(const std::filesystem::path& path, const IngestOptions& options);

/// Deterministic 8:1:1 user partition: floor(0.8U) train, floor(0.1U)
/// valid, remainder test.
void split_users(Dataset& ds, std::uint64_t seed);

enum class TargetPolicy : std::uint8_t { kUniform, kLast };

/// Histories are left-aligned: real items fill the first `lengths[b]`
/// columns, padding (id 0, mask 0) fills the rest.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<ItemId> histories;  // batch_size x seq_len
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;
  std::vector<ItemId> targets;
  std::vector<UserId> users;
  std::vector<ItemId> negatives;  // shared across the batch

  [[nodiscard]] std::span<const ItemId> history_row(std::size_t b) const {
    return {histories.data() + b * seq_len, seq_len};
  }
  [[nodiscard]] std::span<const std::uint8_t> mask_row(std::size_t b) const {
    return {mask.data() + b * seq_len, seq_len};
  }
};

/// Samples `batch_size` train users with replacement, a target position
/// per user (>= 2nd item), the preceding history window, and `n_neg`
/// uniform negatives from [1, num_items].
Batch next_train_batch(const Dataset& ds, std::size_t batch_size, std::size_t n_neg, CounterRng& rng,
                       TargetPolicy policy = TargetPolicy::kUniform);

struct EvalExample {
  UserId user = 0;
  std::vector<ItemId> history;  // most recent max_seq_len of the first 80%
  std::vector<ItemId> targets;  // remaining 20% (at least one)
};

std::vector<EvalExample> eval_examples(const Dataset& ds, Split split);

struct SynthConfig {
  std::size_t n_users = 2000;
  std::size_t n_items = 1000;
  std::size_t n_clusters = 8;
  std::size_t noise_dims = 8;
  std::uint64_t seed = 1;
  std::size_t min_preferred = 2;
  std::size_t max_preferred = 4;
  std::size_t min_length = 20;
  std::size_t max_length = 40;
  double focus = 0.9;          // share of draws from preferred clusters
  double switch_prob = 0.2;    // chance of moving to another preferred cluster
  double zipf_exponent = 1.0;  // popularity skew within a cluster
};

/// Ground truth keyed by dense ids of the returned dataset.
struct SynthTruth {
  std::vector<int> item_cluster;                // size num_items + 1; [0] = -1
  std::vector<std::vector<int>> user_clusters;  // preferred clusters per user
  std::size_t vector_dim = 0;                   // n_clusters + noise_dims
  std::vector<float> item_vectors;              // (num_items + 1) x vector_dim
};

struct SynthResult {
  std::vector<InteractionRecord> records;
  Dataset dataset;
  SynthTruth truth;
};

/// Clustered interaction generator: items are partitioned round-robin
/// into clusters, each user prefers 2-4 clusters and draws mostly from
/// them, with uniform distractors. Sequences have max_seq_len 20.
SynthResult synth_generate(const SynthConfig& config);

struct CategoryMap {
  std::vector<std::vector<int>> item_categories;  // by dense item id; sorted, unique
  std::vector<std::string> vocabulary;
  std::size_t unknown_items = 0;  // lines naming items not in the dataset

  [[nodiscard]] std::size_t num_categories() const { return vocabulary.size(); }
  [[nodiscard]] const std::vector<int>& categories_of(ItemId item) const;
};

/// Reads `item<TAB>cat1,cat2,...` lines.
CategoryMap load_categories(const std::filesystem::path& path, const Dataset& ds);

void write_interactions(const std::filesystem::path& path, const std::vector<InteractionRecord>& records);

}  // namespace dmi
