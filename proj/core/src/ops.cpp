// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

namespace dmi::ops {
namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor output(Shape shape, bool requires_grad) { return Tensor::zeros(shape, requires_grad); }

void record(Tape::BackwardFn fn) { Tape::active()->record(std::move(fn)); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

bool is_scalar(const Tensor& t) { return t.size() == 1; }

// Shared driver for the exact-or-scalar broadcasting binary ops. `fwd`
// computes the value, `da`/`db` the local partials at (x, y).
template <class Fwd, class Da, class Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (is_scalar(a)) {
    shape = b.shape();
  } else if (is_scalar(b)) {
    shape = a.shape();
  } else {
    shape_error(name, a, b);
  }
  const bool rg = tracking({&a, &b});
  Tensor out = output(shape, rg);
  const std::size_t n = shape.size();
  const bool a_bc = a.size() != n;
  const bool b_bc = b.size() != n;
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[a_bc ? 0 : i], bv[b_bc ? 0 : i]);
  if (rg) {
    record([a, b, out, a_bc, b_bc, n, da, db]() mutable {
      auto g = out.grad();
      auto av = a.values();
      auto bv = b.values();
      for (std::size_t i = 0; i < n; ++i) {
        const real x = av[a_bc ? 0 : i];
        const real y = bv[b_bc ? 0 : i];
        if (a.requires_grad()) a.grad()[a_bc ? 0 : i] += g[i] * da(x, y);
        if (b.requires_grad()) b.grad()[b_bc ? 0 : i] += g[i] * db(x, y);
      }
    });
  }
  return out;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const bool rg = tracking({&x});
  Tensor out = output(x.shape(), rg);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  if (rg) {
    // deriv(x, y) receives both input and output.
    record([x, out, deriv]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xv = x.values();
      auto ov = out.values();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], ov[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const bool rg = tracking({&a, &b});
  Tensor out = output({m, n}, rg);
  const real* A = a.values().data();
  const real* B = b.values().data();
  real* C = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const real aip = A[i * k + p];
      const real* brow = B + p * n;
      real* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  if (rg) {
    record([a, b, out, m, k, n]() mutable {
      const real* G = out.grad().data();
      const real* A = a.values().data();
      const real* B = b.values().data();
      if (a.requires_grad()) {
        real* GA = a.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            real s = 0;
            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
            GA[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        real* GB = b.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const real aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const bool rg = tracking({&a, &b});
  Tensor out = output({m, n}, rg);
  const real* A = a.values().data();
  const real* B = b.values().data();
  real* C = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const real* brow = B + j * k;
      real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * n + j] = s;
    }
  }
  if (rg) {
    record([a, b, out, m, k, n]() mutable {
      const real* G = out.grad().data();
      const real* A = a.values().data();
      const real* B = b.values().data();
      if (a.requires_grad()) {
        real* GA = a.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const real g = G[i * n + j];
            if (g == real(0)) continue;
            const real* brow = B + j * k;
            for (std::size_t p = 0; p < k; ++p) GA[i * k + p] += g * brow[p];
          }
      }
      if (b.requires_grad()) {
        real* GB = b.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const real g = G[i * n + j];
            if (g == real(0)) continue;
            const real* arow = A + i * k;
            for (std::size_t p = 0; p < k; ++p) GB[j * k + p] += g * arow[p];
          }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](real x, real y) { return x + y; }, [](real, real) { return real(1); },
      [](real, real) { return real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](real x, real y) { return x - y; }, [](real, real) { return real(1); },
      [](real, real) { return real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](real x, real y) { return x * y; }, [](real, real y) { return y; },
      [](real x, real) { return x; });
}

Tensor scale(const Tensor& x, real factor) {
  return unary(
      x, [factor](real v) { return v * factor; }, [factor](real, real) { return factor; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](real v) { return std::tanh(v); }, [](real, real y) { return real(1) - y * y; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](real v) { return std::sqrt(v); }, [](real, real y) { return real(0.5) / y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](real v) { return v > real(0) ? v : real(0); },
      [](real v, real) { return v > real(0) ? real(1) : real(0); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.shape() != Shape{1, c}) shape_error("layer_norm(gain)", x, gain);
  if (bias.shape() != Shape{1, c}) shape_error("layer_norm(bias)", x, bias);
  const bool rg = tracking({&x, &gain, &bias});
  Tensor out = output(x.shape(), rg);
  // normalized values and inverse std are kept for the backward pass
  std::vector<real> xhat(x.size());
  std::vector<real> inv_std(r);
  auto xv = x.values();
  auto ov = out.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < r; ++i) {
    const real* row = xv.data() + i * c;
    real mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= real(c);
    real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= real(c);
    const real inv = real(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const real h = (row[j] - mu) * inv;
      xhat[i * c + j] = h;
      ov[i * c + j] = h * gv[j] + bv[j];
    }
  }
  if (rg) {
    record([x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c]() mutable {
      auto g = out.grad();
      auto gv = gain.values();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        std::vector<real> dh(c);
        for (std::size_t i = 0; i < r; ++i) {
          real sum_dh = 0, sum_dh_h = 0;
          for (std::size_t j = 0; j < c; ++j) {
            dh[j] = g[i * c + j] * gv[j];
            sum_dh += dh[j];
            sum_dh_h += dh[j] * xhat[i * c + j];
          }
          const real k = inv_std[i] / real(c);
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] += k * (real(c) * dh[j] - sum_dh - xhat[i * c + j] * sum_dh_h);
        }
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  const bool rg = tracking({&x});
  Tensor out = output(x.shape(), rg);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < r; ++i) {
    const real* row = xv.data() + i * c;
    real* o = ov.data() + i * c;
    const real mx = *std::max_element(row, row + c);
    real s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  if (rg) {
    record([x, out, r, c]() mutable {
      auto g = out.grad();
      auto y = out.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < r; ++i) {
        real dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (bias.shape() != Shape{1, weight.rows()}) shape_error("linear(bias)", weight, bias);
  Tensor y = matmul_nt(x, weight);
  const std::size_t r = y.rows(), c = y.cols();
  const bool rg = tracking({&y, &bias});
  Tensor out = output(y.shape(), rg);
  auto yv = y.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = yv[i * c + j] + bv[j];
  if (rg) {
    record([y, bias, out, r, c]() mutable {
      auto g = out.grad();
      if (y.requires_grad()) {
        auto gy = y.grad();
        for (std::size_t i = 0; i < r * c; ++i) gy[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool rg = tracking({&x});
  Tensor out = output({1, 1}, rg);
  real s = 0;
  for (real v : x.values()) s += v;
  out.values()[0] = s;
  if (rg) {
    record([x, out]() mutable {
      const real g = out.grad()[0];
      for (real& gx : x.grad()) gx += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), real(1) / real(x.size())); }

Tensor row_sums(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  const bool rg = tracking({&x});
  Tensor out = output({r, 1}, rg);
  auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j];
    out.values()[i] = s;
  }
  if (rg) {
    record([x, out, r, c]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  const bool rg = tracking({&x});
  Tensor out = output({1, c}, rg);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[j] += xv[i * c + j];
  for (std::size_t j = 0; j < c; ++j) ov[j] /= real(r);
  if (rg) {
    record([x, out, r, c]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] / real(r);
    });
  }
  return out;
}

Tensor l2_norm(const Tensor& x) {
  const bool rg = tracking({&x});
  Tensor out = output({1, 1}, rg);
  real ss = 0;
  for (real v : x.values()) ss += v * v;
  const real norm = std::sqrt(ss);
  out.values()[0] = norm;
  if (rg) {
    record([x, out, norm]() mutable {
      if (norm == real(0)) return;
      const real k = out.grad()[0] / norm;
      auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += k * xv[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  const std::size_t c = table.cols();
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " outside table " +
                           to_string(table.shape()));
    }
  }
  const bool rg = tracking({&table});
  Tensor out = output({ids.size(), c}, rg);
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c, ov.begin() + static_cast<std::ptrdiff_t>(i * c));
  if (rg) {
    record([table, out, ids = std::vector<std::int32_t>(ids.begin(), ids.end()), c]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gt[static_cast<std::size_t>(ids[i]) * c + j] += g[i * c + j];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + to_string(x.shape()));
  }
  const std::size_t c = x.cols();
  const bool rg = tracking({&x});
  Tensor out = output({count, c}, rg);
  std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(begin * c), count * c, out.values().begin());
  if (rg) {
    record([x, out, begin, count, c]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < count * c; ++i) gx[begin * c + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + to_string(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  const bool rg = tracking({&x});
  Tensor out = output({r, count}, rg);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) ov[i * count + j] = xv[i * c + begin + j];
  if (rg) {
    record([x, out, begin, count, r, c]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * c + begin + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0], p);
    r += p.rows();
    rg = rg || p.requires_grad();
  }
  rg = rg && Tape::active() != nullptr;
  Tensor out = output({r, c}, rg);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  if (rg) {
    record([parts = std::vector<Tensor>(parts.begin(), parts.end()), out]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts[0], p);
    c += p.cols();
    rg = rg || p.requires_grad();
  }
  rg = rg && Tape::active() != nullptr;
  Tensor out = output({r, c}, rg);
  auto ov = out.values();
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.cols();
    auto pv = p.values();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) ov[i * c + col + j] = pv[i * pc + j];
    col += pc;
  }
  if (rg) {
    record([parts = std::vector<Tensor>(parts.begin(), parts.end()), out, r, c]() mutable {
      auto g = out.grad();
      std::size_t col = 0;
      for (Tensor& p : parts) {
        const std::size_t pc = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + col + j];
        }
        col += pc;
      }
    });
  }
  return out;
}

Tensor softmax_nll(const Tensor& logits, const Tensor& additive_mask, std::size_t target_col) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (target_col >= c) throw DimensionError("softmax_nll: target column outside " + to_string(logits.shape()));
  if (additive_mask.defined() && additive_mask.shape() != logits.shape())
    shape_error("softmax_nll(mask)", logits, additive_mask);
  const bool rg = tracking({&logits});
  Tensor out = output({1, 1}, rg);
  std::vector<real> probs(r * c);
  auto lv = logits.values();
  real total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    real* z = probs.data() + i * c;
    for (std::size_t j = 0; j < c; ++j)
      z[j] = lv[i * c + j] + (additive_mask.defined() ? additive_mask.values()[i * c + j] : real(0));
    const real mx = *std::max_element(z, z + c);
    real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    const real lse = mx + std::log(s);
    total += lse - z[target_col];
    for (std::size_t j = 0; j < c; ++j) z[j] = std::exp(z[j] - lse);
  }
  out.values()[0] = total / real(r);
  if (rg) {
    record([logits, out, probs = std::move(probs), r, c, target_col]() mutable {
      const real g = out.grad()[0] / real(r);
      auto gl = logits.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          gl[i * c + j] += g * (probs[i * c + j] - (j == target_col ? real(1) : real(0)));
    });
  }
  return out;
}

Tensor detach(const Tensor& x) { return Tensor::from(x.shape(), {x.values().begin(), x.values().end()}, false); }

}  // namespace dmi::ops
