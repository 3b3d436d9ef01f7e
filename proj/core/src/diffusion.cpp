// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dmi/ops.hpp"

namespace dmi {
namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<real> v(shape.size());
  for (real& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor::from(shape, std::move(v), true);
}

Tensor constant(Shape shape, real value) {
  return Tensor::from(shape, std::vector<real>(shape.size(), value), true);
}

void check_step(std::size_t t, const NoiseSchedule& sched, const char* op) {
  if (t < 1 || t > sched.steps) {
    throw UsageError(std::string(op) + ": step " + std::to_string(t) + " outside [1, " +
                     std::to_string(sched.steps) + "]");
  }
}

Tensor fuse(const Tensor& estimate, const Tensor& interest, double eta) {
  if (eta == 0.0) return interest;
  if (eta == 1.0) return estimate;
  return ops::add(ops::scale(estimate, static_cast<real>(eta)), ops::scale(interest, static_cast<real>(1.0 - eta)));
}

}  // namespace

double NoiseSchedule::posterior_variance(std::size_t t) const {
  return beta[t] * (1.0 - bar_alpha[t - 1]) / (1.0 - bar_alpha[t]);
}

NoiseSchedule build_schedule(std::size_t steps, double scale, double alpha_min, double alpha_max) {
  auto fail = [&](const std::string& why) {
    std::ostringstream os;
    os << "noise schedule (T=" << steps << ", s=" << scale << ", alpha_min=" << alpha_min
       << ", alpha_max=" << alpha_max << "): " << why;
    throw ConfigError(os.str());
  };
  if (steps < 1) fail("T must be at least 1");
  if (!(alpha_min > 0.0) || !(alpha_min <= alpha_max)) fail("need 0 < alpha_min <= alpha_max");
  if (!(scale > 0.0)) fail("s must be positive");
  if (!(scale * alpha_max < 1.0)) fail("s * alpha_max must be below 1");
  if (steps > 1 && alpha_min == alpha_max) fail("alpha_min == alpha_max gives a flat schedule for T > 1");

  NoiseSchedule s;
  s.steps = steps;
  s.scale = scale;
  s.alpha_min = alpha_min;
  s.alpha_max = alpha_max;
  s.bar_alpha.assign(steps + 1, 1.0);
  s.alpha.assign(steps + 1, 1.0);
  s.beta.assign(steps + 1, 0.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double ramp =
        steps == 1 ? alpha_min
                   : alpha_min + static_cast<double>(t - 1) / static_cast<double>(steps - 1) * (alpha_max - alpha_min);
    s.bar_alpha[t] = 1.0 - scale * ramp;
    s.alpha[t] = s.bar_alpha[t] / s.bar_alpha[t - 1];
    s.beta[t] = 1.0 - s.alpha[t];
  }
  return s;
}

Tensor forward_diffuse(const Tensor& v0, std::size_t t, const NoiseSchedule& sched, std::span<const real> eps,
                       bool detach) {
  check_step(t, sched, "forward_diffuse");
  if (eps.size() != v0.size())
    throw DimensionError("forward_diffuse: eps has " + std::to_string(eps.size()) + " values for " +
                         to_string(v0.shape()));
  const Tensor base = detach ? ops::detach(v0) : v0;
  const double noise_scale = std::sqrt(1.0 - sched.bar_alpha[t]);
  std::vector<real> noise(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) noise[i] = static_cast<real>(noise_scale * eps[i]);
  return ops::add(ops::scale(base, static_cast<real>(std::sqrt(sched.bar_alpha[t]))),
                  Tensor::from(v0.shape(), std::move(noise)));
}

std::vector<std::size_t> prune_positions(std::span<const real> attention, std::size_t n, double gamma) {
  if (n == 0 || n > attention.size())
    throw UsageError("prune_items: real length " + std::to_string(n) + " outside [1, " +
                     std::to_string(attention.size()) + "]");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("prune_items: gamma must lie in (0, 1)");
  // floor with a small guard so e.g. 0.29 * 100 keeps 29
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return attention[a] > attention[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

Tensor prune_items(const Tensor& history, std::span<const real> attention, std::size_t n, double gamma) {
  const auto positions = prune_positions(attention, n, gamma);
  std::vector<std::int32_t> rows(positions.begin(), positions.end());
  return ops::gather_rows(history, rows);
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& config, CounterRng& rng) {
  const std::size_t d = config.dim;
  if (d == 0 || config.steps == 0 || config.ff_dim == 0) throw ConfigError("denoiser dimensions must be positive");
  if (config.heads == 0 || d % config.heads != 0)
    throw ConfigError("denoiser: heads (" + std::to_string(config.heads) + ") must divide dim (" +
                      std::to_string(d) + ")");
  DenoiserParams p;
  p.config = config;
  std::vector<real> table((config.steps + 1) * d);
  for (real& x : table) x = static_cast<real>(rng.normal(0.0, 0.02));
  p.step_embedding = Tensor::from({config.steps + 1, d}, std::move(table), true);
  if (config.use_transformer) {
    p.wq = uniform_init({d, d}, d, rng);
    p.wk = uniform_init({d, d}, d, rng);
    p.wv = uniform_init({d, d}, d, rng);
    p.wo = uniform_init({d, d}, d, rng);
    p.ln1_gain = constant({1, d}, 1);
    p.ln1_bias = constant({1, d}, 0);
    p.ln2_gain = constant({1, d}, 1);
    p.ln2_bias = constant({1, d}, 0);
    p.ff1_w = uniform_init({config.ff_dim, d}, d, rng);
    p.ff1_b = constant({1, config.ff_dim}, 0);
    p.ff2_w = uniform_init({d, config.ff_dim}, config.ff_dim, rng);
    p.ff2_b = constant({1, d}, 0);
  } else {
    const std::size_t h = config.ff_dim;
    p.mlp1_w = uniform_init({h, 3 * d}, 3 * d, rng);
    p.mlp1_b = constant({1, h}, 0);
    p.mlp2_w = uniform_init({h, h}, h, rng);
    p.mlp2_b = constant({1, h}, 0);
    p.mlp3_w = uniform_init({d, h}, h, rng);
    p.mlp3_b = constant({1, d}, 0);
  }
  return p;
}

std::vector<Tensor> DenoiserParams::parameters() const {
  if (config.use_transformer)
    return {step_embedding, wq, wk, wv, wo, ln1_gain, ln1_bias, ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b};
  return {step_embedding, mlp1_w, mlp1_b, mlp2_w, mlp2_b, mlp3_w, mlp3_b};
}

std::vector<std::string> DenoiserParams::parameter_names() const {
  if (config.use_transformer)
    return {"denoiser.step_embedding", "denoiser.wq",       "denoiser.wk",       "denoiser.wv",
            "denoiser.wo",             "denoiser.ln1_gain", "denoiser.ln1_bias", "denoiser.ln2_gain",
            "denoiser.ln2_bias",       "denoiser.ff1_w",    "denoiser.ff1_b",    "denoiser.ff2_w",
            "denoiser.ff2_b"};
  return {"denoiser.step_embedding", "denoiser.mlp1_w", "denoiser.mlp1_b", "denoiser.mlp2_w",
          "denoiser.mlp2_b",         "denoiser.mlp3_w", "denoiser.mlp3_b"};
}

DenoiseOutput denoise(const DenoiserParams& p, const Tensor& v_t, std::size_t t, const Tensor& context) {
  const std::size_t d = p.config.dim;
  if (t < 1 || t > p.config.steps)
    throw UsageError("denoise: step " + std::to_string(t) + " outside [1, " + std::to_string(p.config.steps) + "]");
  if (v_t.shape() != Shape{1, d}) throw DimensionError("denoise: v_t must be 1 x " + std::to_string(d));
  if (context.cols() != d) throw DimensionError("denoise: context rows must have " + std::to_string(d) + " columns");

  const std::int32_t step_row[] = {static_cast<std::int32_t>(t)};
  const Tensor step = ops::gather_rows(p.step_embedding, step_row);
  DenoiseOutput out;

  if (!p.config.use_transformer) {
    const Tensor parts[] = {v_t, step, ops::mean_rows(context)};
    Tensor x = ops::concat_cols(parts);
    x = ops::relu(ops::linear(x, p.mlp1_w, p.mlp1_b));
    x = ops::relu(ops::linear(x, p.mlp2_w, p.mlp2_b));
    out.estimate = ops::linear(x, p.mlp3_w, p.mlp3_b);
    return out;
  }

  const Tensor kv_parts[] = {step, context};
  const Tensor memory = ops::concat_rows(kv_parts);  // (k + 1) x d
  const Tensor query_in = ops::layer_norm(v_t, p.ln1_gain, p.ln1_bias, real(1e-8));
  const Tensor q = ops::matmul_nt(query_in, p.wq);
  const Tensor keys = ops::matmul_nt(memory, p.wk);
  const Tensor values = ops::matmul_nt(memory, p.wv);

  const std::size_t heads = p.config.heads;
  const std::size_t head_dim = d / heads;
  const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = ops::slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = ops::slice_cols(keys, h * head_dim, head_dim);
    const Tensor vh = ops::slice_cols(values, h * head_dim, head_dim);
    const Tensor weights = ops::softmax_rows(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt));
    out.head_attention.emplace_back(weights.values().begin(), weights.values().end());
    head_out.push_back(ops::matmul(weights, vh));
  }
  const Tensor attended = ops::matmul_nt(ops::concat_cols(head_out), p.wo);
  const Tensor residual = ops::add(v_t, attended);

  const Tensor ff_in = ops::layer_norm(residual, p.ln2_gain, p.ln2_bias, real(1e-8));
  const Tensor ff = ops::linear(ops::relu(ops::linear(ff_in, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b);
  out.estimate = ops::add(residual, ff);
  return out;
}

ReverseCoefficients reverse_coefficients(const NoiseSchedule& sched, std::size_t t) {
  check_step(t, sched, "reverse_step");
  const double denom = 1.0 - sched.bar_alpha[t];
  ReverseCoefficients c;
  c.on_current = std::sqrt(sched.alpha[t]) * (1.0 - sched.bar_alpha[t - 1]) / denom;
  c.on_estimate = std::sqrt(sched.bar_alpha[t - 1]) * (1.0 - sched.alpha[t]) / denom;
  c.sigma = t > 1 ? std::sqrt(sched.posterior_variance(t)) : 0.0;
  return c;
}

std::vector<real> reverse_step(std::span<const real> v_t, std::span<const real> estimate, std::size_t t,
                               const NoiseSchedule& sched, std::span<const real> eps) {
  if (v_t.size() != estimate.size()) throw DimensionError("reverse_step: v_t and estimate differ in size");
  const ReverseCoefficients c = reverse_coefficients(sched, t);
  if (t > 1 && eps.size() != v_t.size()) throw DimensionError("reverse_step: eps has the wrong size");
  std::vector<real> out(v_t.size());
  for (std::size_t i = 0; i < v_t.size(); ++i) {
    double mu = c.on_current * v_t[i] + c.on_estimate * estimate[i];
    if (t > 1) mu += c.sigma * eps[i];
    out[i] = static_cast<real>(mu);
  }
  return out;
}

RefineOutput refine(const Tensor& interest, std::span<const real> attention, const Tensor& history,
                    std::size_t n, const NoiseSchedule& sched, const DenoiserParams& params,
                    const RefineConfig& cfg, CounterRng& rng, RefineMode mode, bool zero_eps) {
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw ConfigError("refine: eta must lie in [0, 1]");
  RefineOutput out;
  if (!cfg.use_diffusion) {
    out.fused = interest;
    return out;
  }
  const std::size_t d = interest.cols();
  auto draw = [&]() {
    std::vector<real> eps(d, real(0));
    if (!zero_eps)
      for (real& e : eps) e = static_cast<real>(rng.normal());
    return eps;
  };

  Tensor context = cfg.use_pruning ? prune_items(history, attention, n, cfg.gamma) : ops::slice_rows(history, 0, n);
  if (cfg.detach_context) context = ops::detach(context);
  out.target = cfg.detach_v0 ? ops::detach(interest) : interest;

  if (mode == RefineMode::kTrain) {
    out.step = 1 + rng.below(sched.steps);
    const std::vector<real> eps = draw();
    const Tensor noisy = forward_diffuse(interest, out.step, sched, eps, cfg.detach_v0);
    out.estimate = denoise(params, noisy, out.step, context).estimate;
  } else {
    out.step = sched.steps;
    std::vector<real> eps = draw();
    Tensor current = forward_diffuse(interest, sched.steps, sched, eps, true);
    for (std::size_t t = sched.steps; t > 0; --t) {
      const Tensor estimate = denoise(params, current, t, context).estimate;
      if (t > 1) eps = draw();
      current = Tensor::from({1, d}, reverse_step(current.values(), estimate.values(), t, sched, eps));
    }
    out.estimate = current;
  }
  out.fused = cfg.detach_v0 ? fuse(out.estimate, interest, cfg.eta) : out.estimate;
  return out;
}

}  // namespace dmi
