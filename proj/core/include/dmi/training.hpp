// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>

#include "dmi/data.hpp"
#include "dmi/model.hpp"
#include "dmi/optim.hpp"

namespace dmi {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t n_neg = 1280;
  double lr = 0.002;
  double lambda = 5.0;
  std::uint64_t max_iterations = 1000000;
  std::uint64_t eval_every = 1000;
  std::uint64_t patience = 5;
  std::uint64_t seed = 0;
  TargetPolicy target_policy = TargetPolicy::kUniform;
  std::size_t eval_threads = 1;
  bool eval_deterministic_eps0 = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Early-stopping bookkeeping carried through checkpoints.
struct FitState {
  std::uint64_t iteration = 0;  // completed train steps
  std::uint64_t evaluations = 0;
  std::uint64_t evals_since_best = 0;
  std::uint64_t best_iteration = 0;
  double best_recall = -1.0;
  bool finished = false;
  // Loss sums since the last evaluation, so a resumed run logs the same averages.
  double sum_total = 0;
  double sum_rec = 0;
  double sum_recon = 0;
  std::uint64_t sum_count = 0;
};

/// Everything needed to evaluate a model or continue its training bitwise.
struct Checkpoint {
  static constexpr int kVersion = 1;

  int version = kVersion;
  Model model;
  TrainConfig train;
  AdamState adam;
  CounterRng rng;  // training stream; step i draws from rng.substream(i)
  FitState state;
  std::uint64_t item_digest = 0;
  std::uint64_t user_digest = 0;
};

/// Copy whose model shares no storage with `ckpt`.
Checkpoint snapshot(const Checkpoint& ckpt);

/// Mean over rows of -log softmax([Z_i . E[t_i], Z_i . E[neg_j]...])[0],
/// negatives equal to the row's target masked out.
Tensor rec_loss(const Tensor& z, std::span<const ItemId> targets, std::span<const ItemId> negatives,
                const Tensor& embeddings);

/// Euclidean distance; `target` is detached.
Tensor recon_loss(const Tensor& estimate, const Tensor& target);

struct LossGraph {
  Tensor total;  // L = L_S + lambda * L_dm
  Tensor rec;    // L_S
  Tensor recon;  // L_dm, mean over rows; undefined without diffusion
};

/// Builds the batch objective under the active tape.
LossGraph batch_losses(const Model& model, const Batch& batch, double lambda, CounterRng& rng);

struct StepLosses {
  double total = 0;
  double rec = 0;
  double recon = 0;
};

/// One Adam step on `ckpt.model`. Throws NumericError on a non-finite loss.
StepLosses train_step(Model& model, AdamState& adam, const Batch& batch, double lambda, CounterRng& rng,
                      std::uint64_t iteration);

/// FNV-1a over histories, targets and negatives.
std::uint64_t batch_digest(const Batch& batch);

struct FitLogEntry {
  std::uint64_t iteration = 0;
  StepLosses losses;  // averaged since the previous evaluation
  double valid_recall = 0;
};

struct FitOptions {
  std::optional<std::filesystem::path> out_dir;  // last.ckpt, best.ckpt, train_log.tsv
  std::function<void(const FitLogEntry&)> on_eval;
  std::uint64_t stop_after = 0;  // >0: pause after this many total iterations
  // Best checkpoint of an interrupted run; otherwise read from out_dir.
  std::optional<Checkpoint> resume_best;
};

/// Fresh checkpoint with initialized parameters.
Checkpoint init_checkpoint(const Dataset& ds, const ModelConfig& model, const TrainConfig& train);

/// Trains `ckpt` in place until patience or max_iterations, evaluating
/// valid Recall@50 every eval_every steps, and returns the best
/// checkpoint. `ckpt` may be a resumed last checkpoint.
Checkpoint fit(const Dataset& ds, Checkpoint& ckpt, const FitOptions& options = {});

}  // namespace dmi
