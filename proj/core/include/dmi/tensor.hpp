// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmi/common.hpp"

namespace dmi {

/// Row-major 2-D shape. Vectors are 1 x n, scalars 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense tensor handle. Copies share storage; use clone() for a deep copy.
///
/// A tensor that requires grad always carries a same-shape gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);
  static Tensor row(std::vector<real> values, bool requires_grad = false);

  [[nodiscard]] bool defined() const { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rows() const { return shape().rows; }
  [[nodiscard]] std::size_t cols() const { return shape().cols; }
  [[nodiscard]] std::size_t size() const { return shape().size(); }

  [[nodiscard]] std::span<real> values();
  [[nodiscard]] std::span<const real> values() const;
  /// Gradient buffer. Writable through const handles so recorded backward
  /// closures can accumulate into their captured inputs.
  [[nodiscard]] std::span<real> grad() const;

  [[nodiscard]] real at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  real& at(std::size_t r, std::size_t c) { return values()[r * cols() + c]; }
  [[nodiscard]] real item() const;

  [[nodiscard]] bool requires_grad() const;
  /// Turns a leaf into a trainable parameter (allocates a zero grad).
  void set_requires_grad(bool on);
  void zero_grad();

  [[nodiscard]] Tensor clone() const;
  [[nodiscard]] bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<real> values;
    std::vector<real> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Define-by-run record of differentiable operations. Ops record onto the
/// tape installed by the innermost Tape::Scope on the calling thread; with
/// no active tape nothing is recorded and outputs never require grad.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays entries in reverse order.
  void backward(Tensor& loss);

  [[nodiscard]] static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<BackwardFn> entries_;
};

/// Convenience wrapper matching the free-function form.
inline void backward(Tensor& loss, Tape& tape) { tape.backward(loss); }

/// True when every value is finite.
[[nodiscard]] bool all_finite(std::span<const real> xs);

}  // namespace dmi
