// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dmi/tensor.hpp"

// Differentiable operations. Broadcasting is limited to exact shape matches
// and 1 x 1 scalars; anything else raises DimensionError.
namespace dmi::ops {

Tensor matmul(const Tensor& a, const Tensor& b);     // a[m,k] . b[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m,k] . b[n,k]^T

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor tanh(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);

/// Normalizes each row to zero mean and unit variance, then applies
/// per-column gain and bias (both 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = real(1e-5));

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);

/// x . W^T + b, with W[out, in] and b[1, out] added to every row.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& x);        // 1 x 1
Tensor mean(const Tensor& x);       // 1 x 1
Tensor row_sums(const Tensor& x);   // rows x 1
Tensor mean_rows(const Tensor& x);  // 1 x cols

/// Euclidean norm of all entries; gradient is taken as zero at the origin.
Tensor l2_norm(const Tensor& x);

/// Rows of `table` at `ids`; backward scatter-adds into the table.
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

/// Mean over rows of -log softmax(logits[r] + mask[r])[target_col].
/// `additive_mask` is a constant (same shape or undefined); entries of -inf
/// or large negative values remove a logit from that row's denominator.
Tensor softmax_nll(const Tensor& logits, const Tensor& additive_mask, std::size_t target_col = 0);

/// Copy of the values that no gradient flows through.
Tensor detach(const Tensor& x);

}  // namespace dmi::ops
