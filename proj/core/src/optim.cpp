// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/optim.hpp"

#include <cmath>
#include <string>

namespace dmi {

void adam_step(std::span<Tensor> params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad()) {
      throw UsageError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.size(), real(0));
      state.second_moment.emplace_back(p.size(), real(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw UsageError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, given " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].size()) {
      throw UsageError("adam_step: moment size mismatch for parameter " + std::to_string(i));
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const real b1 = static_cast<real>(state.beta1);
  const real b2 = static_cast<real>(state.beta2);
  const real step_size = static_cast<real>(state.lr / correction1);
  const real inv_sqrt_c2 = static_cast<real>(1.0 / std::sqrt(correction2));
  const real eps = static_cast<real>(state.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].values();
    auto g = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (real(1) - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
    params[i].zero_grad();
  }
}

}  // namespace dmi
