// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pairlm/rng.hpp"
#include "pairlm/tensor.hpp"

namespace pairlm {

/// 0/1 attention mask; entry (i,j) == 1 means query i may attend to key j.
using ByteMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Matrix kernels with pinned accumulation order. Every output element is a
// strictly k-ascending sum with a single accumulator, so a row's value does
// not depend on how many other rows the product has. Causal-isolation and
// local-window tests require that bit-level property; Eigen's blocked GEMM
// does not guarantee it, so the product loops are written out here (the row
// expressions still vectorize over the output dimension).

template <typename S>
Matrix<S> mm_nn(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> c = Matrix<S>::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k) c.row(i) += a(i, k) * b.row(k);
  return c;
}

template <typename S>
void mm_nn_acc(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k) c.row(i) += a(i, k) * b.row(k);
}

// c = a * b^T (inner dimension is the shared column count).
template <typename S>
Matrix<S> mm_nt(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = a.row(i).dot(b.row(j));
  return c;
}

template <typename S>
void mm_nt_acc(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) += a.row(i).dot(b.row(j));
}

// c += a^T * b, accumulated over a's rows in ascending order.
template <typename S>
void mm_tn_acc(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index p = 0; p < a.cols(); ++p) c.row(p) += a(i, p) * b.row(i);
}

template <typename S>
bool taping(const Tensor<S>& a) {
  return Tape<S>::recording() && a.requires_grad();
}

template <typename S>
bool taping(const Tensor<S>& a, const Tensor<S>& b) {
  return Tape<S>::recording() && (a.requires_grad() || b.requires_grad());
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("add: shape mismatch");
  Tensor<S> out = Tensor<S>::from_matrix(a.value() + b.value(), a.shape());
  if (detail::taping(a, b)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

/// Elementwise (Hadamard) product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("mul: shape mismatch");
  Tensor<S> out =
      Tensor<S>::from_matrix((a.value().array() * b.value().array()).matrix(), a.shape());
  if (detail::taping(a, b)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad())
        a.grad().array() += out.grad().array() * b.value().array();
      if (b.requires_grad())
        b.grad().array() += out.grad().array() * a.value().array();
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  const S cs = static_cast<S>(c);
  Tensor<S> out = Tensor<S>::from_matrix(a.value() * cs, a.shape());
  if (detail::taping(a)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, cs]() mutable {
      if (!out.has_grad()) return;
      a.grad() += out.grad() * cs;
    });
  }
  return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw InputError("matmul: expects rank-2 tensors");
  if (a.cols() != b.rows())
    throw InputError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  Tensor<S> out = Tensor<S>::from_matrix(detail::mm_nn(a.value(), b.value()));
  if (detail::taping(a, b)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const Matrix<S>& g = out.grad();
      if (a.requires_grad()) detail::mm_nt_acc(g, b.value(), a.grad());
      if (b.requires_grad()) detail::mm_tn_acc(a.value(), g, b.grad());
    });
  }
  return out;
}

/// a * b^T without materializing the transpose; used for attention scores and
/// the weight-tied LM head.
template <typename S>
Tensor<S> matmul_transposed(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw InputError("matmul_transposed: expects rank-2 tensors");
  if (a.cols() != b.cols())
    throw InputError("matmul_transposed: inner dimensions differ");
  Tensor<S> out = Tensor<S>::from_matrix(detail::mm_nt(a.value(), b.value()));
  if (detail::taping(a, b)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const Matrix<S>& g = out.grad();
      if (a.requires_grad()) detail::mm_nn_acc(g, b.value(), a.grad());
      if (b.requires_grad()) detail::mm_tn_acc(g, a.value(), b.grad());
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n <= 0 || start + n > x.cols()) throw InputError("slice_cols: out of range");
  Tensor<S> out = Tensor<S>::from_matrix(x.value().middleCols(start, n));
  if (detail::taping(x)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, out, start, n]() mutable {
      if (!out.has_grad()) return;
      x.grad().middleCols(start, n) += out.grad();
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw InputError("concat_cols: empty input");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw InputError("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix<S> m(parts[0].rows(), total);
  Eigen::Index off = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    m.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor<S> out = Tensor<S>::from_matrix(std::move(m));
  if (Tape<S>::recording() && any_grad) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([parts, out]() mutable {
      if (!out.has_grad()) return;
      Eigen::Index off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) p.grad() += out.grad().middleCols(off, p.cols());
        off += p.cols();
      }
    });
  }
  return out;
}

/// Exact-erf GELU: x * Phi(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  Matrix<S> y = x.value().unaryExpr([inv_sqrt2](S v) {
    return static_cast<S>(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
  });
  Tensor<S> out = Tensor<S>::from_matrix(std::move(y), x.shape());
  if (detail::taping(x)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
      const S inv_sqrt2pi = static_cast<S>(0.39894228040143267794);
      x.grad().array() +=
          out.grad().array() * x.value().array().unaryExpr([inv_sqrt2, inv_sqrt2pi](S v) {
            const S cdf = static_cast<S>(0.5) * (S(1) + std::erf(v * inv_sqrt2));
            const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
            return cdf + v * pdf;
          });
    });
  }
  return out;
}

/// Row-wise layer norm with multiplicative gain and no bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, double eps) {
  const Eigen::Index h = x.cols();
  if (gain.numel() != h) throw InputError("layer_norm: gain size mismatch");
  const S epss = static_cast<S>(eps);
  Matrix<S> xhat(x.rows(), h);
  Matrix<S> inv_std(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S mu = x.value().row(i).mean();
    auto centered = (x.value().row(i).array() - mu);
    const S var = centered.square().sum() / static_cast<S>(h);
    const S is = S(1) / std::sqrt(var + epss);
    inv_std(i, 0) = is;
    xhat.row(i) = (centered * is).matrix();
  }
  Matrix<S> y(x.rows(), h);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    y.row(i) = (xhat.row(i).array() * gain.value().array()).matrix();
  Tensor<S> out = Tensor<S>::from_matrix(std::move(y), x.shape());
  if (detail::taping(x, gain)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, gain, out, xhat, inv_std]() mutable {
      if (!out.has_grad()) return;
      const Eigen::Index h = x.cols();
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        auto dy = out.grad().row(i).array();
        if (gain.requires_grad()) gain.grad().array() += dy * xhat.row(i).array();
        if (x.requires_grad()) {
          auto w = dy * gain.value().array();
          const S w_mean = w.sum() / static_cast<S>(h);
          const S wx_mean = (w * xhat.row(i).array()).sum() / static_cast<S>(h);
          x.grad().row(i).array() +=
              inv_std(i, 0) * (w - w_mean - xhat.row(i).array() * wx_mean);
        }
      }
    });
  }
  return out;
}

/// Max-subtracted softmax over the last axis. When a mask is given, entries
/// with allowed == 0 get probability exactly 0 and contribute exactly nothing
/// to the row sum; combined with the sequential kernels above this is what
/// makes masked positions bit-invisible. Row reductions run strictly
/// left-to-right so appending masked columns cannot change earlier rows.
template <typename S>
Tensor<S> softmax_last(const Tensor<S>& x, const ByteMask* allowed = nullptr) {
  if (allowed != nullptr && (allowed->rows() != x.rows() || allowed->cols() != x.cols()))
    throw InputError("softmax: mask shape mismatch");
  const Eigen::Index n = x.cols();
  if (n < 1) throw InputError("softmax: empty rows");
  Matrix<S> y(x.rows(), n);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S m = -std::numeric_limits<S>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (allowed != nullptr && (*allowed)(i, j) == 0) continue;
      m = std::max(m, x.value()(i, j));
    }
    if (m == -std::numeric_limits<S>::infinity())
      throw InputError("softmax: fully masked row " + std::to_string(i));
    S sum = S(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool ok = allowed == nullptr || (*allowed)(i, j) != 0;
      const S e = ok ? std::exp(x.value()(i, j) - m) : S(0);
      y(i, j) = e;
      sum += e;
    }
    const S inv = S(1) / sum;
    for (Eigen::Index j = 0; j < n; ++j) y(i, j) *= inv;
  }
  Tensor<S> out = Tensor<S>::from_matrix(std::move(y), x.shape());
  if (detail::taping(x)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S dot = S(0);
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          dot += out.grad()(i, j) * out.value()(i, j);
        x.grad().row(i).array() +=
            out.value().row(i).array() * (out.grad().row(i).array() - dot);
      }
    });
  }
  return out;
}

/// Rotary position embedding, non-interleaved pairing: within each head of
/// width d, coordinate j < d/2 rotates with coordinate j + d/2 at frequency
/// base^(-2j/d). A rotation per pair, so pair norms are preserved.
template <typename S>
Tensor<S> rotary_apply(const Tensor<S>& x, int num_heads, double base,
                       const std::vector<long>& positions) {
  if (x.shape().size() != 2) throw InputError("rotary: expects rank-2 tensor");
  if (num_heads <= 0 || x.cols() % num_heads != 0)
    throw ConfigError("rotary: columns not divisible into heads");
  const Eigen::Index dh = x.cols() / num_heads;
  if (dh % 2 != 0) throw ConfigError("rotary: head dimension must be even");
  if (static_cast<Eigen::Index>(positions.size()) != x.rows())
    throw InputError("rotary: positions length mismatch");
  if (base <= 0.0) throw ConfigError("rotary: base must be positive");

  const Eigen::Index half = dh / 2;
  auto rotate = [&](const Matrix<S>& src, Matrix<S>& dst, bool inverse) {
    for (Eigen::Index t = 0; t < src.rows(); ++t) {
      const double pos = static_cast<double>(positions[static_cast<std::size_t>(t)]);
      for (int hd = 0; hd < num_heads; ++hd) {
        const Eigen::Index off = static_cast<Eigen::Index>(hd) * dh;
        for (Eigen::Index j = 0; j < half; ++j) {
          const double theta =
              pos * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
          const S c = static_cast<S>(std::cos(theta));
          const S s = static_cast<S>(inverse ? -std::sin(theta) : std::sin(theta));
          const S a = src(t, off + j);
          const S b = src(t, off + half + j);
          dst(t, off + j) = c * a - s * b;
          dst(t, off + half + j) = s * a + c * b;
        }
      }
    }
  };

  Matrix<S> y(x.rows(), x.cols());
  rotate(x.value(), y, false);
  Tensor<S> out = Tensor<S>::from_matrix(std::move(y), x.shape());
  if (detail::taping(x)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, out, rotate]() mutable {
      if (!out.has_grad()) return;
      Matrix<S> gx(x.rows(), x.cols());
      rotate(out.grad(), gx, true);  // inverse rotation transports the gradient back
      x.grad() += gx;
    });
  }
  return out;
}

/// Gather rows of an embedding table.
template <typename S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<std::int32_t>& ids) {
  if (ids.empty()) throw InputError("embedding: empty id list");
  Matrix<S> y(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw InputError("embedding: id " + std::to_string(ids[i]) + " out of range");
    y.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  Tensor<S> out = Tensor<S>::from_matrix(std::move(y));
  if (detail::taping(table)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([table, out, ids]() mutable {
      if (!out.has_grad()) return;
      for (std::size_t i = 0; i < ids.size(); ++i)
        table.grad().row(ids[i]) += out.grad().row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

/// Inverted dropout; mask entries drawn row-major so the draw order is fixed.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw InputError("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  Matrix<S> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      mask(i, j) = rng.bernoulli(p) ? S(0) : keep_scale;
  Tensor<S> out =
      Tensor<S>::from_matrix((x.value().array() * mask.array()).matrix(), x.shape());
  if (detail::taping(x)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, out, mask]() mutable {
      if (!out.has_grad()) return;
      x.grad().array() += out.grad().array() * mask.array();
    });
  }
  return out;
}

constexpr std::int32_t kIgnoreLabel = -1;

template <typename S>
struct CrossEntropyResult {
  Tensor<S> loss;          // scalar mean NLL over supervised positions
  long supervised = 0;     // number of non-ignored labels
  bool all_ignored = false;
};

/// Mean negative log-softmax over positions whose label is not kIgnoreLabel.
/// All positions ignored yields loss 0 with the warning flag set. A non-finite
/// result throws NumericError: the loss is where numeric trouble surfaces.
template <typename S>
CrossEntropyResult<S> cross_entropy(const Tensor<S>& logits,
                                    const std::vector<std::int32_t>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw InputError("cross_entropy: labels length mismatch");
  const Eigen::Index v = logits.cols();
  long count = 0;
  for (std::int32_t y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || y >= v) throw InputError("cross_entropy: label out of range");
    ++count;
  }
  CrossEntropyResult<S> res;
  res.supervised = count;
  if (count == 0) {
    res.loss = Tensor<S>::scalar(S(0));
    res.all_ignored = true;
    return res;
  }

  Matrix<S> probs(logits.rows(), v);
  S total = S(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (labels[static_cast<std::size_t>(i)] == kIgnoreLabel) {
      probs.row(i).setZero();
      continue;
    }
    S m = logits.value()(i, 0);
    for (Eigen::Index j = 1; j < v; ++j) m = std::max(m, logits.value()(i, j));
    S sum = S(0);
    for (Eigen::Index j = 0; j < v; ++j) {
      const S e = std::exp(logits.value()(i, j) - m);
      probs(i, j) = e;
      sum += e;
    }
    probs.row(i) /= sum;
    const S lse = m + std::log(sum);
    total += lse - logits.value()(i, labels[static_cast<std::size_t>(i)]);
  }
  const S mean = total / static_cast<S>(count);
  if (!std::isfinite(static_cast<double>(mean)))
    throw NumericError("cross_entropy: non-finite loss");
  res.loss = Tensor<S>::scalar(mean);
  if (detail::taping(logits)) {
    res.loss.set_requires_grad(true);
    Tensor<S> loss = res.loss;
    Tape<S>::current()->record([logits, loss, labels, probs, count]() mutable {
      if (!loss.has_grad()) return;
      const S g = loss.grad()(0, 0) / static_cast<S>(count);
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const std::int32_t y = labels[static_cast<std::size_t>(i)];
        if (y == kIgnoreLabel) continue;
        logits.grad().row(i) += g * probs.row(i);
        logits.grad()(i, y) -= g;
      }
    });
  }
  return res;
}

/// Sum of all entries as a scalar tensor.
template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.value().sum());
  if (detail::taping(x)) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      x.grad().array() += out.grad()(0, 0);
    });
  }
  return out;
}

}  // namespace pairlm
