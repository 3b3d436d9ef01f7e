// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/retrieval.hpp"

#include <algorithm>
#include <thread>
#include <unordered_set>

#include "dmi/ops.hpp"

namespace dmi {

Tensor user_vectors(const Model& model, std::span<const ItemId> history, UserId user, const InferenceOptions& opts) {
  if (history.empty()) throw UsageError("user_vectors: empty history");
  CounterRng rng = CounterRng(opts.seed).substream(static_cast<std::uint64_t>(user));
  const InterestOutput out = extract(model.extractor, history);
  const std::size_t k = out.interests.rows();
  const std::size_t d = out.interests.cols();
  const std::size_t n = history.size();
  std::vector<real> fused;
  fused.reserve(k * d);
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor v = ops::slice_rows(out.interests, i, 1);
    const auto attention = out.attention.values().subspan(i * n, n);
    const RefineOutput r = refine(v, attention, out.history, n, model.schedule, model.denoiser, model.config.refine,
                                  rng, RefineMode::kInfer, opts.deterministic_eps0);
    const auto z = r.fused.values();
    fused.insert(fused.end(), z.begin(), z.end());
  }
  return Tensor::from({k, d}, std::move(fused));
}

RetrievalResult topn(const Tensor& z, const Tensor& embeddings, std::size_t n, std::span<const ItemId> exclude) {
  if (n == 0) throw UsageError("topn: N must be at least 1");
  const std::size_t d = z.cols();
  if (embeddings.cols() != d)
    throw DimensionError("topn: Z is " + to_string(z.shape()) + " but embeddings are " +
                         to_string(embeddings.shape()));
  const std::size_t items = embeddings.rows();
  std::vector<std::uint8_t> skip(items, 0);
  if (items > 0) skip[0] = 1;
  for (ItemId e : exclude)
    if (e > 0 && static_cast<std::size_t>(e) < items) skip[static_cast<std::size_t>(e)] = 1;

  const auto zv = z.values();
  const auto ev = embeddings.values();
  std::vector<RetrievedItem> all;
  all.reserve(items);
  for (std::size_t i = 1; i < items; ++i) {
    if (skip[i]) continue;
    const real* row = ev.data() + i * d;
    RetrievedItem best{static_cast<ItemId>(i), 0, 0};
    for (std::size_t k = 0; k < z.rows(); ++k) {
      const real* zk = zv.data() + k * d;
      real s = 0;
      for (std::size_t j = 0; j < d; ++j) s += zk[j] * row[j];
      if (k == 0 || s > best.score) {
        best.score = s;
        best.interest = k;
      }
    }
    all.push_back(best);
  }
  RetrievalResult result;
  result.truncated = all.size() < n;
  const std::size_t keep = std::min(n, all.size());
  auto before = [](const RetrievedItem& a, const RetrievedItem& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), before);
  all.resize(keep);
  result.items = std::move(all);
  return result;
}

std::vector<MetricsReport> evaluate_examples(const Model& model, std::span<const EvalExample> examples,
                                             const EvalOptions& opts) {
  if (opts.cutoffs.empty()) throw ConfigError("evaluation needs at least one cutoff");
  const std::size_t max_n = *std::max_element(opts.cutoffs.begin(), opts.cutoffs.end());
  if (max_n == 0) throw ConfigError("cutoffs must be positive");

  std::vector<std::vector<ItemId>> ranked(examples.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t u = begin; u < examples.size(); u += step) {
      const EvalExample& ex = examples[u];
      const Tensor z = user_vectors(model, ex.history, ex.user, opts.inference);
      const std::span<const ItemId> exclude =
          opts.exclude_history ? std::span<const ItemId>(ex.history) : std::span<const ItemId>();
      const RetrievalResult r = topn(z, model.extractor.embeddings, max_n, exclude);
      ranked[u].reserve(r.items.size());
      for (const auto& it : r.items) ranked[u].push_back(it.item);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, examples.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
    for (auto& t : pool) t.join();
  }

  std::vector<UserId> users;
  std::vector<std::vector<ItemId>> targets;
  users.reserve(examples.size());
  targets.reserve(examples.size());
  for (const auto& ex : examples) {
    users.push_back(ex.user);
    targets.push_back(ex.targets);
  }
  std::vector<MetricsReport> reports;
  for (std::size_t n : opts.cutoffs)
    reports.push_back(aggregate_metrics(n, users, ranked, targets, opts.categories, opts.keep_per_user));
  return reports;
}

std::vector<MetricsReport> evaluate_split(const Model& model, const Dataset& ds, Split split, const EvalOptions& opts) {
  const std::vector<EvalExample> examples = eval_examples(ds, split);
  if (examples.empty()) throw DataError(std::string("split '") + to_string(split) + "' has no evaluable users");
  return evaluate_examples(model, examples, opts);
}

}  // namespace dmi
