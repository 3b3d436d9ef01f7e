// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace dmi {

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from(shape, std::vector<real>(shape.size(), real(0)), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  if (shape.rows == 0 || shape.cols == 0) {
    throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (values.size() != shape.size()) {
    throw DimensionError("tensor of shape " + to_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = shape;
  t.impl_->values = std::move(values);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(real value, bool requires_grad) { return from({1, 1}, {value}, requires_grad); }

Tensor Tensor::row(std::vector<real> values, bool requires_grad) {
  const std::size_t n = values.size();
  return from({1, n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape empty{};
  return impl_ ? impl_->shape : empty;
}

std::span<real> Tensor::values() { return impl_->values; }
std::span<const real> Tensor::values() const { return impl_->values; }
std::span<real> Tensor::grad() const { return impl_->grad; }

real Tensor::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->values.size(), real(0));
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
}

Tensor Tensor::clone() const {
  Tensor t = from(shape(), impl_->values, false);
  if (requires_grad()) {
    t.impl_->requires_grad = true;
    t.impl_->grad = impl_->grad;
  }
  return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

void Tape::backward(Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward needs a scalar loss, got " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward: loss does not depend on any tensor that requires grad");
  }
  loss.grad()[0] += real(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

bool all_finite(std::span<const real> xs) {
  return std::all_of(xs.begin(), xs.end(), [](real x) { return std::isfinite(x); });
}

}  // namespace dmi
