// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmi/tensor.hpp"

namespace dmi {

struct AdamState {
  std::vector<std::vector<real>> first_moment;
  std::vector<std::vector<real>> second_moment;
  std::uint64_t step = 0;
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update on every tensor in `params`, in place,
/// followed by zeroing their gradients. Moments are allocated on the
/// first call; later calls must pass parameters of the same shapes.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace dmi
