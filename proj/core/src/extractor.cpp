// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/extractor.hpp"

#include <cmath>

#include "dmi/ops.hpp"

namespace dmi {
namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<real> v(shape.size());
  for (real& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor::from(shape, std::move(v), true);
}

constexpr real kMaskedLogit = real(-1e9);

}  // namespace

ExtractorParams ExtractorParams::init(std::size_t num_items, const ExtractorConfig& config, CounterRng& rng) {
  if (config.dim == 0 || config.attn_dim == 0 || config.interests == 0)
    throw ConfigError("extractor dimensions must be positive");
  ExtractorParams p;
  p.config = config;
  std::vector<real> table((num_items + 1) * config.dim, real(0));
  for (std::size_t i = config.dim; i < table.size(); ++i) table[i] = static_cast<real>(rng.normal(0.0, 0.02));
  p.embeddings = Tensor::from({num_items + 1, config.dim}, std::move(table), true);
  p.w1 = uniform_init({config.attn_dim, config.dim}, config.dim, rng);
  p.w2 = uniform_init({config.interests, config.attn_dim}, config.attn_dim, rng);
  return p;
}

InterestOutput extract(const ExtractorParams& params, std::span<const ItemId> history,
                       std::span<const std::uint8_t> mask) {
  if (history.size() != mask.size())
    throw DimensionError("extract: history has " + std::to_string(history.size()) + " ids but mask has " +
                         std::to_string(mask.size()));
  std::size_t real_count = 0;
  for (auto m : mask) real_count += m != 0;
  if (history.empty() || real_count == 0) throw UsageError("extract: history has no real items");

  const std::size_t seq_len = history.size();
  const std::size_t k = params.config.interests;
  InterestOutput out;
  out.history = ops::gather_rows(params.embeddings, history);
  Tensor hidden = ops::tanh(ops::matmul_nt(params.w1, out.history));  // attn_dim x seq_len
  Tensor logits = ops::matmul(params.w2, hidden);                      // k x seq_len
  std::vector<real> pad(k * seq_len, real(0));
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t j = 0; j < seq_len; ++j)
      if (mask[j] == 0) pad[r * seq_len + j] = kMaskedLogit;
  logits = ops::add(logits, Tensor::from({k, seq_len}, std::move(pad)));
  out.attention = ops::softmax_rows(logits);
  out.interests = ops::matmul(out.attention, out.history);
  return out;
}

InterestOutput extract(const ExtractorParams& params, std::span<const ItemId> history) {
  const std::vector<std::uint8_t> mask(history.size(), 1);
  return extract(params, history, mask);
}

std::size_t argmax_interest(const Tensor& interests, std::span<const real> target) {
  if (target.size() != interests.cols())
    throw DimensionError("select_interest: target has " + std::to_string(target.size()) +
                         " dims, interests are " + to_string(interests.shape()));
  std::size_t best = 0;
  real best_score = 0;
  for (std::size_t k = 0; k < interests.rows(); ++k) {
    real s = 0;
    for (std::size_t j = 0; j < target.size(); ++j) s += interests.at(k, j) * target[j];
    if (k == 0 || s > best_score) {
      best = k;
      best_score = s;
    }
  }
  return best;
}

InterestSelection select_interest(const InterestOutput& out, std::span<const real> target) {
  InterestSelection sel;
  sel.index = argmax_interest(out.interests, target);
  sel.interest = ops::slice_rows(out.interests, sel.index, 1);
  const std::size_t t = out.attention.cols();
  const auto row = out.attention.values().subspan(sel.index * t, t);
  sel.attention.assign(row.begin(), row.end());
  return sel;
}

}  // namespace dmi
