// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dmi/rng.hpp"
#include "dmi/tensor.hpp"

namespace dmi {

/// Linear ramp on the cumulative noise level:
///   1 - bar_alpha[t] = s * (alpha_min + (t-1)/(T-1) * (alpha_max - alpha_min))
/// with bar_alpha[0] = 1. Arrays are indexed 0..T; alpha[0] and beta[0]
/// are placeholders (1 and 0).
struct NoiseSchedule {
  std::size_t steps = 0;
  double scale = 1.0;
  double alpha_min = 1e-4;
  double alpha_max = 1e-3;
  std::vector<double> bar_alpha;
  std::vector<double> alpha;
  std::vector<double> beta;

  /// Posterior variance beta[t] (1 - bar_alpha[t-1]) / (1 - bar_alpha[t]).
  [[nodiscard]] double posterior_variance(std::size_t t) const;
};

/// Throws ConfigError unless 0 < alpha_min <= alpha_max, s > 0,
/// s * alpha_max < 1, T >= 1, and (for T > 1) alpha_min < alpha_max.
NoiseSchedule build_schedule(std::size_t steps, double scale, double alpha_min, double alpha_max);

/// v_t = sqrt(bar_alpha[t]) v0 + sqrt(1 - bar_alpha[t]) eps. With `detach`
/// no gradient reaches v0.
Tensor forward_diffuse(const Tensor& v0, std::size_t t, const NoiseSchedule& sched, std::span<const real> eps,
                       bool detach = true);

/// Positions of the max(1, floor(gamma * n)) largest attention weights
/// among the first n entries, ties to the earlier position, returned in
/// ascending position order.
std::vector<std::size_t> prune_positions(std::span<const real> attention, std::size_t n, double gamma);

/// Rows of H at prune_positions(); differentiable w.r.t. H.
Tensor prune_items(const Tensor& history, std::span<const real> attention, std::size_t n, double gamma);

struct DenoiserConfig {
  std::size_t dim = 64;
  std::size_t steps = 5;  // T; the step table has T + 1 rows
  std::size_t heads = 2;
  std::size_t ff_dim = 256;
  bool use_transformer = true;  // false selects the 3-layer perceptron variant
};

/// Either a single pre-norm cross-attention transformer layer or, for the
/// perceptron ablation, three dense layers over [v_t, e_t, mean(C)].
struct DenoiserParams {
  DenoiserConfig config;
  Tensor step_embedding;  // (T + 1) x dim

  Tensor wq, wk, wv, wo;  // dim x dim, applied as x W^T
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;

  Tensor mlp1_w, mlp1_b, mlp2_w, mlp2_b, mlp3_w, mlp3_b;

  static DenoiserParams init(const DenoiserConfig& config, CounterRng& rng);

  /// Trainable tensors of the active variant, in a fixed order.
  [[nodiscard]] std::vector<Tensor> parameters() const;
  [[nodiscard]] std::vector<std::string> parameter_names() const;
};

struct DenoiseOutput {
  Tensor estimate;                                // 1 x dim
  std::vector<std::vector<real>> head_attention;  // per head, k + 1 weights (transformer only)
};

/// Estimates v0 from v_t with keys/values [e_t; C].
DenoiseOutput denoise(const DenoiserParams& params, const Tensor& v_t, std::size_t t, const Tensor& context);

struct ReverseCoefficients {
  double on_current = 0;   // multiplies v_hat_t
  double on_estimate = 0;  // multiplies v_tilde_0
  double sigma = 0;        // 0 at t = 1
};

ReverseCoefficients reverse_coefficients(const NoiseSchedule& sched, std::size_t t);

/// Posterior-mean step; noise is added only for t > 1.
std::vector<real> reverse_step(std::span<const real> v_t, std::span<const real> estimate, std::size_t t,
                               const NoiseSchedule& sched, std::span<const real> eps);

struct RefineConfig {
  double eta = 0.4;
  double gamma = 0.5;
  bool use_diffusion = true;
  bool use_pruning = true;
  bool detach_v0 = true;       // false: free gradients and Z = estimate alone
  bool detach_context = true;  // stop gradients into the pruned items C
};

enum class RefineMode { kTrain, kInfer };

struct RefineOutput {
  Tensor fused;     // Z
  Tensor estimate;  // v_tilde_0 (train) or v_hat_0 (infer); undefined without diffusion
  Tensor target;    // v0 as seen by the reconstruction loss
  std::size_t step = 0;
};

/// Train mode: one random step t ~ U{1..T} and a single denoiser call.
/// Infer mode: diffuse to T, then T reverse steps. `zero_eps` replaces
/// every Gaussian draw with 0.
RefineOutput refine(const Tensor& interest, std::span<const real> attention, const Tensor& history,
                    std::size_t n, const NoiseSchedule& sched, const DenoiserParams& params,
                    const RefineConfig& cfg, CounterRng& rng, RefineMode mode, bool zero_eps = false);

}  // namespace dmi
