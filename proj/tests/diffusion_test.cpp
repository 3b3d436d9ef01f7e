// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmi/diffusion.hpp"
#include "dmi/extractor.hpp"
#include "dmi/ops.hpp"
#include "support/test_util.hpp"

namespace dmi {
namespace {

using testing::copy_values;
using testing::grad_check;
using testing::random_tensor;

DenoiserParams make_denoiser(std::size_t d, std::size_t heads, bool transformer, std::uint64_t seed,
                             std::size_t steps = 5, std::size_t ff = 8) {
  CounterRng rng(seed);
  DenoiserParams p =
      DenoiserParams::init({.dim = d, .steps = steps, .heads = heads, .ff_dim = ff, .use_transformer = transformer}, rng);
  // Non-trivial norms so the layer-norm paths are exercised.
  if (transformer) {
    for (Tensor t : {p.ln1_gain, p.ln1_bias, p.ln2_gain, p.ln2_bias, p.ff1_b, p.ff2_b})
      for (real& x : t.values()) x = static_cast<real>(rng.normal(0.5, 0.3));
  }
  for (real& x : p.step_embedding.values()) x = static_cast<real>(rng.normal());
  return p;
}

void zero_out(Tensor t) {
  for (real& x : t.values()) x = 0;
}

// Residual-free path only: output projection and feed-forward output are zero.
DenoiserParams identity_denoiser(std::size_t d, std::uint64_t seed) {
  DenoiserParams p = make_denoiser(d, 2, true, seed);
  zero_out(p.wo);
  zero_out(p.ff2_w);
  zero_out(p.ff2_b);
  return p;
}

TEST(Schedule, EndpointsAndMidpoint) {
  const NoiseSchedule s = build_schedule(5, 1.0, 1e-4, 1e-3);
  EXPECT_NEAR(1 - s.bar_alpha[1], 1e-4, 1e-12);
  EXPECT_NEAR(1 - s.bar_alpha[5], 1e-3, 1e-12);
  EXPECT_NEAR(1 - s.bar_alpha[3], 5.5e-4, 1e-12);
  EXPECT_EQ(s.bar_alpha[0], 1.0);
}

TEST(Schedule, InvariantsOverGrid) {
  CounterRng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + rng.below(50);
    const double amin = std::pow(10.0, -5 + 3 * rng.uniform());
    const double amax = amin * (1.0001 + 20 * rng.uniform());
    const double s = 0.01 + (0.99 / amax) * rng.uniform() * 0.99;
    if (!(s * amax < 1)) continue;
    const NoiseSchedule sch = build_schedule(T, s, amin, amax);
    EXPECT_NEAR(1 - sch.bar_alpha[1], s * amin, 1e-12);
    EXPECT_NEAR(1 - sch.bar_alpha[T], s * (T == 1 ? amin : amax), 1e-12);
    for (std::size_t t = 1; t <= T; ++t) {
      EXPECT_LT(sch.bar_alpha[t], sch.bar_alpha[t - 1]);
      EXPECT_GT(sch.bar_alpha[t], 0.0);
      EXPECT_GT(sch.alpha[t], 0.0);
      EXPECT_LT(sch.alpha[t], 1.0);
      EXPECT_NEAR(sch.alpha[t], sch.bar_alpha[t] / sch.bar_alpha[t - 1], 1e-15);
      EXPECT_NEAR(sch.beta[t], 1 - sch.alpha[t], 1e-15);
      const double ramp = T == 1 ? amin : amin + double(t - 1) / double(T - 1) * (amax - amin);
      EXPECT_NEAR(1 - sch.bar_alpha[t], s * ramp, 1e-12);
    }
  }
}

TEST(Schedule, InvalidParametersAreConfigErrors) {
  EXPECT_THROW((void)build_schedule(0, 1, 1e-4, 1e-3), ConfigError);
  EXPECT_THROW((void)build_schedule(5, 1, 0, 1e-3), ConfigError);
  EXPECT_THROW((void)build_schedule(5, 1, 1e-3, 1e-4), ConfigError);
  EXPECT_THROW((void)build_schedule(5, 0, 1e-4, 1e-3), ConfigError);
  EXPECT_THROW((void)build_schedule(5, 2000, 1e-4, 1e-3), ConfigError);
  EXPECT_NO_THROW((void)build_schedule(1, 1, 1e-3, 1e-3));
}

TEST(ForwardDiffuse, NoiselessAndZeroNoiseLimits) {
  CounterRng rng(2);
  const Tensor v0 = random_tensor({1, 6}, rng);
  const std::vector<real> zero(6, 0);
  const NoiseSchedule s = build_schedule(5, 1, 1e-4, 1e-3);
  for (std::size_t t = 1; t <= 5; ++t) {
    const Tensor vt = forward_diffuse(v0, t, s, zero);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(vt.values()[j], std::sqrt(s.bar_alpha[t]) * v0.values()[j], 1e-14);
  }
  const NoiseSchedule tiny = build_schedule(5, 1e-9, 1e-4, 1e-3);
  const Tensor eps = random_tensor({1, 6}, rng);
  const Tensor vt = forward_diffuse(v0, 5, tiny, eps.values());
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(vt.values()[j], v0.values()[j], 1e-5);
  EXPECT_THROW((void)forward_diffuse(v0, 0, s, zero), UsageError);
  EXPECT_THROW((void)forward_diffuse(v0, 6, s, zero), UsageError);
  EXPECT_THROW((void)forward_diffuse(v0, 1, s, std::vector<real>(5, 0)), DimensionError);
}

TEST(ForwardDiffuse, MonteCarloMoments) {
  CounterRng rng(3);
  const Tensor v0 = random_tensor({1, 4}, rng);
  const NoiseSchedule s = build_schedule(5, 1, 1e-2, 1e-1);  // larger noise so the variance is measurable
  const std::size_t t = 4, n = 10000;
  std::vector<double> sum(4, 0), sum2(4, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<real> eps(4);
    for (real& e : eps) e = static_cast<real>(rng.normal());
    const Tensor vt = forward_diffuse(v0, t, s, eps);
    for (std::size_t j = 0; j < 4; ++j) {
      sum[j] += vt.values()[j];
      sum2[j] += vt.values()[j] * vt.values()[j];
    }
  }
  const double var = 1 - s.bar_alpha[t];
  for (std::size_t j = 0; j < 4; ++j) {
    const double mean = sum[j] / n;
    const double sample_var = sum2[j] / n - mean * mean;
    EXPECT_NEAR(mean, std::sqrt(s.bar_alpha[t]) * v0.values()[j], 4 * std::sqrt(var / n));
    EXPECT_NEAR(sample_var, var, 0.1 * var);
  }
}

TEST(ForwardDiffuse, DetachFlagControlsGradient) {
  CounterRng rng(4);
  const NoiseSchedule s = build_schedule(5, 1, 1e-4, 1e-3);
  Tensor v0 = random_tensor({1, 3}, rng, true);
  const std::vector<real> eps(3, real(0.5));
  Tape tape;
  Tape::Scope scope(tape);
  EXPECT_FALSE(forward_diffuse(v0, 2, s, eps, true).requires_grad());
  Tensor loss = ops::sum(forward_diffuse(v0, 2, s, eps, false));
  tape.backward(loss);
  for (real g : v0.grad()) EXPECT_NEAR(g, std::sqrt(s.bar_alpha[2]), 1e-14);
}

TEST(Prune, Examples) {
  const std::vector<real> a = {0.5, 0.1, 0.3, 0.05, 0.05};
  EXPECT_EQ(prune_positions(a, 5, 0.4), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(prune_positions(a, 5, 0.999), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(prune_positions(a, 1, 0.3), (std::vector<std::size_t>{0}));
  // tie between positions 3 and 4 goes to the earlier one
  EXPECT_EQ(prune_positions(std::vector<real>{0.1, 0.1, 0.1, 0.35, 0.35}, 5, 0.2), (std::vector<std::size_t>{3}));
  EXPECT_THROW((void)prune_positions(a, 0, 0.5), UsageError);
  EXPECT_THROW((void)prune_positions(a, 6, 0.5), UsageError);
  EXPECT_THROW((void)prune_positions(a, 5, 1.0), ConfigError);
}

TEST(Prune, MatchesFullSortOracle) {
  CounterRng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + rng.below(20);
    const std::size_t n = 1 + rng.below(len);
    std::vector<real> a(len);
    // coarse values so ties are common
    for (real& x : a) x = static_cast<real>(rng.below(5)) / 4;
    const double gamma = 0.01 + 0.98 * rng.uniform();
    std::vector<std::pair<real, std::size_t>> ranked;
    for (std::size_t i = 0; i < n; ++i) ranked.push_back({a[i], i});
    std::sort(ranked.begin(), ranked.end(), [](auto x, auto y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
    std::size_t k = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n) + 1e-9));
    k = std::max<std::size_t>(k, 1);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < k; ++i) expect.push_back(ranked[i].second);
    std::sort(expect.begin(), expect.end());
    ASSERT_EQ(prune_positions(a, n, gamma), expect);

    const Tensor h = random_tensor({len, 3}, rng);
    const Tensor c = prune_items(h, a, n, gamma);
    ASSERT_EQ(c.rows(), k);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(c.at(r, j), h.at(expect[r], j));
  }
}

TEST(Denoise, ZeroOutputWeightsGiveResidualIdentity) {
  CounterRng rng(6);
  const DenoiserParams p = identity_denoiser(8, 7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor vt = random_tensor({1, 8}, rng);
    const Tensor c = random_tensor({3, 8}, rng);
    const Tensor est = denoise(p, vt, 1 + rng.below(5), c).estimate;
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(est.values()[j], vt.values()[j]);
  }
}

TEST(Denoise, SingleHeadAttentionSumsToOne) {
  CounterRng rng(8);
  const DenoiserParams p = make_denoiser(4, 1, true, 9);
  const Tensor vt = random_tensor({1, 4}, rng);
  const Tensor c = random_tensor({1, 4}, rng);
  const DenoiseOutput out = denoise(p, vt, 2, c);
  ASSERT_EQ(out.head_attention.size(), 1u);
  ASSERT_EQ(out.head_attention[0].size(), 2u);
  EXPECT_NEAR(out.head_attention[0][0] + out.head_attention[0][1], 1.0, 1e-12);
}

// Step-by-step dense evaluation of the pre-norm cross-attention layer.
std::vector<double> dense_denoise(const DenoiserParams& p, const std::vector<double>& v, std::size_t t,
                                  const Tensor& c) {
  const std::size_t d = p.config.dim, h = p.config.heads, hd = d / h, ff = p.config.ff_dim;
  auto norm = [&](const std::vector<double>& x, const Tensor& g, const Tensor& b) {
    double mu = 0, var = 0;
    for (double e : x) mu += e;
    mu /= static_cast<double>(d);
    for (double e : x) var += (e - mu) * (e - mu);
    var /= static_cast<double>(d);
    std::vector<double> y(d);
    for (std::size_t j = 0; j < d; ++j) y[j] = (x[j] - mu) / std::sqrt(var + 1e-8) * g.values()[j] + b.values()[j];
    return y;
  };
  auto project = [&](const std::vector<double>& x, const Tensor& w) {  // x W^T
    std::vector<double> y(w.rows(), 0.0);
    for (std::size_t o = 0; o < w.rows(); ++o)
      for (std::size_t i = 0; i < w.cols(); ++i) y[o] += w.at(o, i) * x[i];
    return y;
  };
  std::vector<std::vector<double>> mem;
  mem.emplace_back(d);
  for (std::size_t j = 0; j < d; ++j) mem[0][j] = p.step_embedding.at(t, j);
  for (std::size_t r = 0; r < c.rows(); ++r) {
    mem.emplace_back(d);
    for (std::size_t j = 0; j < d; ++j) mem.back()[j] = c.at(r, j);
  }
  const auto q = project(norm(v, p.ln1_gain, p.ln1_bias), p.wq);
  std::vector<std::vector<double>> keys, vals;
  for (const auto& m : mem) {
    keys.push_back(project(m, p.wk));
    vals.push_back(project(m, p.wv));
  }
  std::vector<double> heads_out(d, 0.0);
  for (std::size_t hh = 0; hh < h; ++hh) {
    std::vector<double> w(mem.size());
    double mx = -1e300;
    for (std::size_t r = 0; r < mem.size(); ++r) {
      double s = 0;
      for (std::size_t j = 0; j < hd; ++j) s += q[hh * hd + j] * keys[r][hh * hd + j];
      w[r] = s / std::sqrt(static_cast<double>(hd));
      mx = std::max(mx, w[r]);
    }
    double z = 0;
    for (double& x : w) z += x = std::exp(x - mx);
    for (std::size_t r = 0; r < mem.size(); ++r)
      for (std::size_t j = 0; j < hd; ++j) heads_out[hh * hd + j] += w[r] / z * vals[r][hh * hd + j];
  }
  const auto att = project(heads_out, p.wo);
  std::vector<double> res(d);
  for (std::size_t j = 0; j < d; ++j) res[j] = v[j] + att[j];
  const auto n2 = norm(res, p.ln2_gain, p.ln2_bias);
  std::vector<double> hidden = project(n2, p.ff1_w);
  for (std::size_t i = 0; i < ff; ++i) hidden[i] = std::max(0.0, hidden[i] + p.ff1_b.values()[i]);
  const auto out = project(hidden, p.ff2_w);
  for (std::size_t j = 0; j < d; ++j) res[j] += out[j] + p.ff2_b.values()[j];
  return res;
}

TEST(Denoise, MatchesDenseOracle) {
  CounterRng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const DenoiserParams p = make_denoiser(4, trial % 2 == 0 ? 2 : 1, true, 500 + trial);
    const Tensor vt = random_tensor({1, 4}, rng);
    const Tensor c = random_tensor({2, 4}, rng);
    const std::size_t t = 1 + rng.below(5);
    const auto expect = dense_denoise(p, {vt.values().begin(), vt.values().end()}, t, c);
    const Tensor got = denoise(p, vt, t, c).estimate;
    for (std::size_t j = 0; j < 4; ++j) ASSERT_NEAR(got.values()[j], expect[j], 1e-6);
  }
}

TEST(Denoise, PerceptronVariantUsesStepAndContextMean) {
  CounterRng rng(11);
  const DenoiserParams p = make_denoiser(4, 2, false, 12);
  const Tensor vt = random_tensor({1, 4}, rng);
  const Tensor c = random_tensor({3, 4}, rng);
  // Reordering the context leaves the mean and so the output unchanged.
  const std::int32_t perm[] = {2, 0, 1};
  const Tensor a = denoise(p, vt, 3, c).estimate;
  const Tensor b = denoise(p, vt, 3, ops::gather_rows(c, perm)).estimate;
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.values()[j], b.values()[j], 1e-12);
  const Tensor other_step = denoise(p, vt, 4, c).estimate;
  EXPECT_NE(copy_values(a), copy_values(other_step));
  EXPECT_TRUE(denoise(p, vt, 3, c).head_attention.empty());
}

TEST(Denoise, Errors) {
  const DenoiserParams p = make_denoiser(4, 2, true, 13);
  CounterRng rng(14);
  const Tensor vt = random_tensor({1, 4}, rng);
  EXPECT_THROW((void)denoise(p, vt, 0, random_tensor({2, 4}, rng)), UsageError);
  EXPECT_THROW((void)denoise(p, vt, 6, random_tensor({2, 4}, rng)), UsageError);
  EXPECT_THROW((void)denoise(p, random_tensor({1, 3}, rng), 1, random_tensor({2, 4}, rng)), DimensionError);
  EXPECT_THROW((void)denoise(p, vt, 1, random_tensor({2, 3}, rng)), DimensionError);
  CounterRng init(1);
  EXPECT_THROW((void)DenoiserParams::init({.dim = 6, .heads = 4}, init), ConfigError);
}

TEST(Denoise, GradientsMatchFiniteDifferences) {
  for (bool transformer : {true, false}) {
    const DenoiserParams p = make_denoiser(4, 2, transformer, 15);
    CounterRng rng(16);
    Tensor vt = random_tensor({1, 4}, rng, true);
    Tensor c = random_tensor({2, 4}, rng, true);
    const Tensor probe = random_tensor({1, 4}, rng);
    auto loss = [&] { return ops::sum(ops::mul(ops::tanh(denoise(p, vt, 2, c).estimate), probe)); };
    std::vector<Tensor> params = p.parameters();
    std::vector<std::string> names = p.parameter_names();
    params.push_back(vt);
    names.push_back("v_t");
    params.push_back(c);
    names.push_back("context");
    const auto report = grad_check(params, names, loss, 1e-6);
    EXPECT_LT(report.worst_relative, 1e-3) << (transformer ? "transformer " : "mlp ") << report.worst_name;
  }
}

TEST(ReverseStep, LastStepReturnsEstimate) {
  CounterRng rng(17);
  const NoiseSchedule s = build_schedule(5, 1, 1e-4, 1e-3);
  const Tensor vt = random_tensor({1, 6}, rng);
  const Tensor est = random_tensor({1, 6}, rng);
  const Tensor eps = random_tensor({1, 6}, rng);
  const auto out = reverse_step(vt.values(), est.values(), 1, s, eps.values());
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out[j], est.values()[j], 1e-12);
  const ReverseCoefficients c = reverse_coefficients(s, 1);
  EXPECT_EQ(c.on_current, 0.0);
  EXPECT_NEAR(c.on_estimate, 1.0, 1e-12);
  EXPECT_EQ(c.sigma, 0.0);
}

TEST(ReverseStep, PosteriorMeanConsistency) {
  CounterRng rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 2 + rng.below(20);
    const double amin = 1e-4 + 1e-2 * rng.uniform();
    const NoiseSchedule s = build_schedule(T, 1, amin, amin * (1.5 + 5 * rng.uniform()));
    const std::size_t t = 1 + rng.below(T);
    const Tensor v0 = random_tensor({1, 5}, rng);
    const std::vector<real> zero(5, 0);
    const Tensor vt = forward_diffuse(v0, t, s, zero);
    const auto prev = reverse_step(vt.values(), v0.values(), t, s, zero);
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_NEAR(prev[j], std::sqrt(s.bar_alpha[t - 1]) * v0.values()[j], 1e-10);
    const ReverseCoefficients c = reverse_coefficients(s, t);
    if (t > 1) EXPECT_NEAR(c.sigma * c.sigma, s.beta[t] * (1 - s.bar_alpha[t - 1]) / (1 - s.bar_alpha[t]), 1e-15);
  }
}

TEST(ReverseStep, NearIdentityScheduleAndNoise) {
  CounterRng rng(19);
  const NoiseSchedule s = build_schedule(5, 1e-6, 1e-4, 1e-3);
  const Tensor v = random_tensor({1, 4}, rng);
  const std::vector<real> zero(4, 0);
  const auto out = reverse_step(v.values(), v.values(), 3, s, zero);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out[j], v.values()[j], 1e-6);
  // Noise enters with weight sigma for t > 1.
  const std::vector<real> one(4, 1);
  const auto noisy = reverse_step(v.values(), v.values(), 3, s, one);
  EXPECT_NEAR(noisy[0] - out[0], reverse_coefficients(s, 3).sigma, 1e-12);
  EXPECT_THROW((void)reverse_step(v.values(), v.values(), 0, s, zero), UsageError);
  EXPECT_THROW((void)reverse_step(v.values(), v.values(), 6, s, zero), UsageError);
}

struct RefineFixture {
  ExtractorParams extractor;
  DenoiserParams denoiser;
  NoiseSchedule schedule = build_schedule(5, 1, 1e-4, 1e-3);
  std::vector<ItemId> ids = {1, 2, 3, 4, 5, 6};
  real target[4] = {0.3, -0.2, 0.5, 0.1};

  explicit RefineFixture(bool transformer = true) {
    CounterRng rng(20);
    extractor = ExtractorParams::init(8, {.dim = 4, .attn_dim = 6, .interests = 2}, rng);
    for (real& x : extractor.embeddings.values().subspan(4)) x = static_cast<real>(rng.normal());
    denoiser = make_denoiser(4, 2, transformer, 21);
  }

  RefineOutput run(const RefineConfig& cfg, RefineMode mode, std::uint64_t seed = 1, bool zero_eps = false,
                   InterestSelection* selection = nullptr) {
    const InterestOutput out = extract(extractor, ids);
    const InterestSelection sel = select_interest(out, target);
    if (selection != nullptr) *selection = sel;
    CounterRng rng(seed);
    return refine(sel.interest, sel.attention, out.history, ids.size(), schedule, denoiser, cfg, rng, mode, zero_eps);
  }
};

TEST(Refine, EtaZeroReturnsInterest) {
  RefineFixture f;
  for (RefineMode mode : {RefineMode::kTrain, RefineMode::kInfer}) {
    InterestSelection sel;
    const RefineOutput r = f.run({.eta = 0}, mode, 1, false, &sel);
    EXPECT_EQ(copy_values(r.fused), copy_values(sel.interest));
  }
}

TEST(Refine, EtaOneInferReturnsReverseChainOutput) {
  RefineFixture f;
  const RefineOutput r = f.run({.eta = 1}, RefineMode::kInfer, 3);
  EXPECT_EQ(copy_values(r.fused), copy_values(r.estimate));
  EXPECT_EQ(r.step, 5u);
}

TEST(Refine, EtaMixesLinearly) {
  RefineFixture f;
  InterestSelection sel;
  const RefineOutput r = f.run({.eta = 0.4}, RefineMode::kInfer, 3, false, &sel);
  for (std::size_t j = 0; j < 4; ++j)
    EXPECT_NEAR(r.fused.values()[j], 0.4 * r.estimate.values()[j] + 0.6 * sel.interest.values()[j], 1e-12);
  EXPECT_THROW((void)f.run({.eta = 1.5}, RefineMode::kInfer), ConfigError);
}

TEST(Refine, NoDiffusionPassesInterestThrough) {
  RefineFixture f;
  InterestSelection sel;
  const RefineOutput r = f.run({.use_diffusion = false}, RefineMode::kTrain, 1, false, &sel);
  EXPECT_TRUE(r.fused.same_storage(sel.interest));
  EXPECT_FALSE(r.estimate.defined());
}

TEST(Refine, NoiselessIdentityPipelineRecoversInterest) {
  RefineFixture f;
  f.denoiser = identity_denoiser(4, 22);
  f.schedule = build_schedule(5, 1e-6, 1e-4, 1e-3);
  InterestSelection sel;
  const RefineOutput r = f.run({.eta = 1}, RefineMode::kInfer, 4, false, &sel);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.estimate.values()[j], sel.interest.values()[j], 1e-3);
}

TEST(Refine, DeterministicEpsIgnoresSeed) {
  RefineFixture f;
  const RefineOutput a = f.run({}, RefineMode::kInfer, 1, true);
  const RefineOutput b = f.run({}, RefineMode::kInfer, 99, true);
  EXPECT_EQ(copy_values(a.fused), copy_values(b.fused));
  const RefineOutput c = f.run({}, RefineMode::kInfer, 1, false);
  const RefineOutput d = f.run({}, RefineMode::kInfer, 1, false);
  EXPECT_EQ(copy_values(c.fused), copy_values(d.fused));
}

TEST(Refine, TrainStepsAreUniform) {
  RefineFixture f;
  std::vector<int> count(6, 0);
  for (std::uint64_t seed = 0; seed < 5000; ++seed) ++count[f.run({}, RefineMode::kTrain, seed).step];
  EXPECT_EQ(count[0], 0);
  for (std::size_t t = 1; t <= 5; ++t) EXPECT_NEAR(count[t], 1000, 4 * std::sqrt(5000 * 0.2 * 0.8));
}

double norm_of(std::span<const real> g) {
  double s = 0;
  for (real x : g) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

void zero_all(const std::vector<Tensor>& ts) {
  for (Tensor t : ts) t.zero_grad();
}

TEST(Refine, ReconstructionLossStopsAtExtractorByDefault) {
  for (bool transformer : {true, false}) {
    RefineFixture f(transformer);
    zero_all(f.extractor.parameters());
    zero_all(f.denoiser.parameters());
    Tape tape;
    Tape::Scope scope(tape);
    const RefineOutput r = f.run({}, RefineMode::kTrain, 5);
    Tensor recon = ops::l2_norm(ops::sub(r.estimate, ops::detach(r.target)));
    tape.backward(recon);
    for (const Tensor& t : f.extractor.parameters())
      for (real g : t.grad()) ASSERT_EQ(g, 0.0);
    double denoiser_norm = 0;
    for (const Tensor& t : f.denoiser.parameters()) denoiser_norm += norm_of(t.grad());
    EXPECT_GT(denoiser_norm, 0.0);
  }
}

TEST(Refine, FusedVectorCarriesExtractorGradient) {
  RefineFixture f;
  zero_all(f.extractor.parameters());
  zero_all(f.denoiser.parameters());
  Tape tape;
  Tape::Scope scope(tape);
  const RefineOutput r = f.run({}, RefineMode::kTrain, 6);
  const Tensor probe = Tensor::row({1, -2, 0.5, 3});
  Tensor loss = ops::sum(ops::mul(r.fused, probe));
  tape.backward(loss);
  for (const Tensor& t : f.extractor.parameters()) EXPECT_GT(norm_of(t.grad()), 0.0);
  double denoiser_norm = 0;
  for (const Tensor& t : f.denoiser.parameters()) denoiser_norm += norm_of(t.grad());
  EXPECT_GT(denoiser_norm, 0.0);
}

TEST(Refine, FreeGradientVariantUsesEstimateAndReachesExtractor) {
  RefineFixture f;
  zero_all(f.extractor.parameters());
  Tape tape;
  Tape::Scope scope(tape);
  const RefineConfig cfg{.detach_v0 = false, .detach_context = false};
  const RefineOutput r = f.run(cfg, RefineMode::kTrain, 7);
  EXPECT_TRUE(r.fused.same_storage(r.estimate));
  Tensor recon = ops::l2_norm(ops::sub(r.estimate, ops::detach(r.target)));
  tape.backward(recon);
  double extractor_norm = 0;
  for (const Tensor& t : f.extractor.parameters()) extractor_norm += norm_of(t.grad());
  EXPECT_GT(extractor_norm, 0.0);
}

TEST(Refine, PruningSwitchChangesContext) {
  RefineFixture f;
  const RefineOutput pruned = f.run({.eta = 1}, RefineMode::kInfer, 8, true);
  const RefineOutput full = f.run({.eta = 1, .use_pruning = false}, RefineMode::kInfer, 8, true);
  EXPECT_NE(copy_values(pruned.fused), copy_values(full.fused));
}

TEST(Refine, TrainModeGradientsMatchFiniteDifferences) {
  RefineFixture f;
  const Tensor probe = Tensor::row({1, -2, 0.5, 3});
  // Detached paths make finite differences disagree by design, so check the
  // fully differentiable variant.
  const RefineConfig cfg{.detach_v0 = false, .detach_context = false};
  auto loss = [&] {
    const RefineOutput r = f.run(cfg, RefineMode::kTrain, 9);
    return ops::add(ops::sum(ops::mul(r.fused, probe)), ops::l2_norm(r.estimate));
  };
  std::vector<Tensor> params = f.extractor.parameters();
  std::vector<std::string> names = {"embeddings", "w1", "w2"};
  for (const Tensor& t : f.denoiser.parameters()) params.push_back(t);
  for (const auto& n : f.denoiser.parameter_names()) names.push_back(n);
  const auto report = grad_check(params, names, loss, 1e-6);
  EXPECT_LT(report.worst_relative, 1e-3) << report.worst_name;
}

}  // namespace
}  // namespace dmi
