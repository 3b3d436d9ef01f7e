// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dmi/ops.hpp"
#include "dmi/training.hpp"
#include "support/test_util.hpp"

namespace dmi {
namespace {

using testing::copy_values;
using testing::grad_check;
using testing::random_tensor;

double brute_rec_loss(const Tensor& z, const std::vector<ItemId>& targets, const std::vector<ItemId>& negs,
                      const Tensor& e) {
  auto dot = [&](std::size_t row, ItemId item) {
    double s = 0;
    for (std::size_t j = 0; j < z.cols(); ++j) s += z.at(row, j) * e.at(static_cast<std::size_t>(item), j);
    return s;
  };
  double total = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double pos = dot(i, targets[i]);
    double denom = std::exp(pos);
    for (ItemId n : negs)
      if (n != targets[i]) denom += std::exp(dot(i, n));
    total += -std::log(std::exp(pos) / denom);
  }
  return total / static_cast<double>(z.rows());
}

TEST(RecLoss, MaskedNegativeReducesToBinary) {
  const Tensor e = Tensor::from({4, 2}, {0, 0, 1, 0, 0, 1, 0.5, 0.5});
  const Tensor z = Tensor::from({1, 2}, {2, -1});
  const std::vector<ItemId> targets = {1};
  const std::vector<ItemId> negs = {1, 2};
  const double pos = 2, other = -1;
  EXPECT_NEAR(rec_loss(z, targets, negs, e).item(), -std::log(std::exp(pos) / (std::exp(pos) + std::exp(other))),
              1e-12);
}

TEST(RecLoss, SaturatesToZero) {
  const Tensor e = Tensor::from({3, 2}, {0, 0, 1, 0, 0, 1});
  const Tensor z = Tensor::from({1, 2}, {100, -100});
  EXPECT_NEAR(rec_loss(z, std::vector<ItemId>{1}, std::vector<ItemId>{2}, e).item(), 0.0, 1e-12);
}

TEST(RecLoss, HandValuesMatchBruteForce) {
  const Tensor e = Tensor::from({5, 2}, {0, 0, 0.1, 0.2, -0.3, 0.4, 0.5, -0.1, 0.2, 0.2});
  const Tensor z = Tensor::from({2, 2}, {1.0, 0.5, -0.5, 2.0});
  const std::vector<ItemId> targets = {1, 3};
  const std::vector<ItemId> negs = {2, 3, 4};
  EXPECT_NEAR(rec_loss(z, targets, negs, e).item(), brute_rec_loss(z, targets, negs, e), 1e-6);
}

TEST(RecLoss, RandomInstancesMatchBruteForce) {
  CounterRng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t items = 3 + rng.below(20), b = 1 + rng.below(5), d = 1 + rng.below(6);
    const Tensor e = random_tensor({items + 1, d}, rng);
    const Tensor z = random_tensor({b, d}, rng);
    std::vector<ItemId> targets(b), negs(1 + rng.below(10));
    for (ItemId& t : targets) t = static_cast<ItemId>(1 + rng.below(items));
    for (ItemId& n : negs) n = static_cast<ItemId>(1 + rng.below(items));
    EXPECT_NEAR(rec_loss(z, targets, negs, e).item(), brute_rec_loss(z, targets, negs, e), 1e-6);
  }
}

TEST(RecLoss, InvalidIdsAreUsageErrors) {
  const Tensor e = Tensor::from({3, 1}, {0, 1, 2});
  const Tensor z = Tensor::from({1, 1}, {1});
  EXPECT_THROW((void)rec_loss(z, std::vector<ItemId>{0}, std::vector<ItemId>{1}, e), UsageError);
  EXPECT_THROW((void)rec_loss(z, std::vector<ItemId>{1}, std::vector<ItemId>{3}, e), UsageError);
  EXPECT_THROW((void)rec_loss(z, std::vector<ItemId>{1, 2}, std::vector<ItemId>{1}, e), DimensionError);
}

TEST(RecLoss, GradientMatchesFiniteDifferences) {
  CounterRng rng(2);
  const Tensor e = random_tensor({7, 3}, rng, true);
  const Tensor z = random_tensor({3, 3}, rng, true);
  const std::vector<ItemId> targets = {1, 4, 6};
  const std::vector<ItemId> negs = {2, 4, 5, 3};
  const auto report = grad_check({e, z}, {"E", "Z"}, [&] { return rec_loss(z, targets, negs, e); }, 1e-6);
  EXPECT_LT(report.worst_relative, 1e-6) << report.worst_name;
}

TEST(ReconLoss, Examples) {
  const Tensor a = Tensor::row({1, 2});
  EXPECT_EQ(recon_loss(a, a).item(), 0.0);
  EXPECT_NEAR(recon_loss(Tensor::row({4, 6}), a).item(), 5.0, 1e-15);
  CounterRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor({1, 8}, rng), y = random_tensor({1, 8}, rng);
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += (x.values()[j] - y.values()[j]) * (x.values()[j] - y.values()[j]);
    EXPECT_NEAR(recon_loss(x, y).item(), std::sqrt(s), 1e-7);
  }
  EXPECT_THROW((void)recon_loss(Tensor::row({1}), a), DimensionError);
}

TEST(ReconLoss, TargetCarriesNoGradient) {
  Tensor est = Tensor::from({1, 2}, {4, 6}, true);
  Tensor tgt = Tensor::from({1, 2}, {1, 2}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor l = recon_loss(est, tgt);
  tape.backward(l);
  EXPECT_NEAR(est.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(est.grad()[1], 0.8, 1e-12);
  EXPECT_EQ(tgt.grad()[0], 0.0);
  EXPECT_EQ(tgt.grad()[1], 0.0);
}

Dataset toy_dataset(std::size_t users = 40, std::uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.n_users = users;
  cfg.n_items = 60;
  cfg.n_clusters = 4;
  cfg.noise_dims = 2;
  cfg.min_length = 6;
  cfg.max_length = 10;
  cfg.seed = seed;
  Dataset ds = synth_generate(cfg).dataset;
  split_users(ds, 1);
  return ds;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.extractor = {.dim = 4, .attn_dim = 5, .interests = 2};
  m.steps = 3;
  m.heads = 2;
  m.ff_dim = 6;
  return m;
}

Model make_model(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed = 4) {
  CounterRng rng(seed);
  Model m = Model::init(ds.num_items(), cfg, rng);
  // Spread embeddings out so attention and the losses are far from flat.
  for (real& x : m.extractor.embeddings.values().subspan(cfg.extractor.dim)) x = static_cast<real>(rng.normal(0, 0.5));
  return m;
}

double grad_norm(const std::vector<Tensor>& ts) {
  double s = 0;
  for (const Tensor& t : ts)
    for (real g : t.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

void zero_grads(const Model& m) {
  for (Tensor t : m.arrays()) t.zero_grad();
}

TEST(BatchLosses, DecompositionHolds) {
  const Dataset ds = toy_dataset();
  const Model m = make_model(ds, tiny_model());
  CounterRng rng(5);
  const Batch b = next_train_batch(ds, 8, 20, rng);
  for (double lambda : {0.0, 3.0, 5.0}) {
    CounterRng step(6);
    Tape tape;
    Tape::Scope scope(tape);
    const LossGraph g = batch_losses(m, b, lambda, step);
    EXPECT_NEAR(g.total.item(), g.rec.item() + lambda * g.recon.item(), 1e-6);
    EXPECT_GT(g.recon.item(), 0.0);
  }
}

TEST(BatchLosses, GradientRoutingContract) {
  const Dataset ds = toy_dataset();
  const Model m = make_model(ds, tiny_model());
  CounterRng rng(7);
  const Batch b = next_train_batch(ds, 8, 20, rng);
  {
    zero_grads(m);
    CounterRng step(8);
    Tape tape;
    Tape::Scope scope(tape);
    const LossGraph g = batch_losses(m, b, 5.0, step);
    Tensor recon = ops::scale(g.recon, 5);
    tape.backward(recon);
    EXPECT_EQ(grad_norm(m.extractor.parameters()), 0.0);
    EXPECT_GT(grad_norm(m.denoiser.parameters()), 0.0);
  }
  {
    zero_grads(m);
    CounterRng step(8);
    Tape tape;
    Tape::Scope scope(tape);
    LossGraph g = batch_losses(m, b, 5.0, step);
    tape.backward(g.rec);
    for (const Tensor& t : m.extractor.parameters()) EXPECT_GT(grad_norm({t}), 0.0);
    EXPECT_GT(grad_norm(m.denoiser.parameters()), 0.0);
  }
}

TEST(BatchLosses, EveryTrainableParameterPassesGradientCheck) {
  const Dataset ds = toy_dataset();
  for (bool transformer : {true, false}) {
    ModelConfig cfg = tiny_model();
    cfg.use_transformer = transformer;
    // Free gradients so every path is differentiable for finite differences.
    // L_dm is left out: its target is detached by definition, which finite
    // differences cannot see. Its denoiser gradient is checked below.
    cfg.refine.detach_v0 = false;
    cfg.refine.detach_context = false;
    const Model m = make_model(ds, cfg);
    CounterRng rng(9);
    const Batch b = next_train_batch(ds, 3, 6, rng);
    auto loss = [&] {
      CounterRng step(10);
      return batch_losses(m, b, 0.0, step).total;
    };
    std::vector<Tensor> params = m.trainable();
    std::vector<std::string> names = {"embeddings", "w1", "w2"};
    for (const auto& n : m.denoiser.parameter_names()) names.push_back(n);
    const auto report = grad_check(params, names, loss, 1e-6);
    EXPECT_LT(report.worst_relative, 1e-3) << report.worst_name;
  }
}

TEST(BatchLosses, DefaultRoutingMatchesFiniteDifferencesOnDenoiser) {
  const Dataset ds = toy_dataset();
  const Model m = make_model(ds, tiny_model());
  CounterRng rng(11);
  const Batch b = next_train_batch(ds, 3, 6, rng);
  auto loss = [&] {
    CounterRng step(12);
    return batch_losses(m, b, 5.0, step).total;
  };
  const auto report = grad_check(m.denoiser.parameters(), m.denoiser.parameter_names(), loss, 1e-6);
  EXPECT_LT(report.worst_relative, 1e-3) << report.worst_name;
}

// A plain self-attentive multi-interest step, built directly from the
// extractor and the sampled-softmax loss.
void plain_step(const ExtractorParams& ex, AdamState& adam, const Batch& b) {
  Tape tape;
  {
    Tape::Scope scope(tape);
    std::vector<Tensor> rows;
    const std::size_t d = ex.config.dim;
    for (std::size_t i = 0; i < b.batch_size; ++i) {
      const InterestOutput out = extract(ex, b.history_row(i), b.mask_row(i));
      const auto target = ex.embeddings.values().subspan(static_cast<std::size_t>(b.targets[i]) * d, d);
      rows.push_back(select_interest(out, target).interest);
    }
    Tensor loss = rec_loss(ops::concat_rows(rows), b.targets, b.negatives, ex.embeddings);
    tape.backward(loss);
  }
  for (std::size_t j = 0; j < ex.config.dim; ++j) ex.embeddings.grad()[j] = 0;
  std::vector<Tensor> params = ex.parameters();
  adam_step(params, adam);
}

TEST(TrainStep, NoDiffusionZeroLambdaEqualsPlainStep) {
  const Dataset ds = toy_dataset();
  ModelConfig cfg = tiny_model();
  cfg.refine.use_diffusion = false;
  Model a = make_model(ds, cfg);
  Model b = a.clone();
  AdamState adam_a, adam_b;
  CounterRng rng(13);
  for (int step = 0; step < 5; ++step) {
    const Batch batch = next_train_batch(ds, 8, 20, rng);
    CounterRng step_rng(14);
    (void)train_step(a, adam_a, batch, 0.0, step_rng, static_cast<std::uint64_t>(step));
    plain_step(b.extractor, adam_b, batch);
  }
  const auto pa = a.arrays(), pb = b.arrays();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(copy_values(pa[i]), copy_values(pb[i])) << i;
  EXPECT_EQ(a.trainable().size(), 3u);
}

TEST(TrainStep, NonFiniteLossIsNumericError) {
  const Dataset ds = toy_dataset();
  Model m = make_model(ds, tiny_model());
  m.extractor.embeddings.values()[m.extractor.config.dim] = std::numeric_limits<real>::quiet_NaN();
  AdamState adam;
  CounterRng rng(15);
  // Row 1 of E is NaN; make every history include item 1.
  Batch b = next_train_batch(ds, 4, 10, rng);
  for (std::size_t i = 0; i < b.batch_size; ++i) b.histories[i * b.seq_len] = 1;
  try {
    (void)train_step(m, adam, b, 5.0, rng, 42);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 42"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batch digest"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace dmi
