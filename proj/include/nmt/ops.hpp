#pragma once

// Differentiable free functions over Tensor<Scalar>.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nmt/mask.hpp"
#include "nmt/random.hpp"
#include "nmt/tensor.hpp"
#include "nmt/token.hpp"

namespace nmt {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Element offsets of every input batch slice, one per output batch slice.
// Axes of size 1 in `in_batch` repeat; an empty `in_batch` repeats everywhere.
inline std::vector<Index> broadcast_offsets(const Shape& in_batch, const Shape& out_batch, Index slice) {
  const Index count = shape_numel(out_batch);
  std::vector<Index> offsets(static_cast<std::size_t>(count), 0);
  if (in_batch.empty()) return offsets;
  const std::size_t r = out_batch.size();
  std::vector<Index> stride(r, 0);
  Index s = 1;
  for (std::size_t i = r; i-- > 0;) {
    stride[i] = in_batch[i] == 1 ? 0 : s;
    s *= in_batch[i];
  }
  std::vector<Index> idx(r, 0);
  for (Index c = 0; c < count; ++c) {
    Index off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * stride[i];
    offsets[static_cast<std::size_t>(c)] = off * slice;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_batch[i]) break;
      idx[i] = 0;
    }
  }
  return offsets;
}

}  // namespace detail

/// Batched matrix product [..., m, k] x [..., k, n] -> [..., m, n]. Leading
/// batch axes must match or be 1; a rank-2 operand applies to every slice.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) throw mismatch();

  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);

  // Fast path: right operand shared by all slices, so rows can be stacked.
  if (b_batch.empty()) {
    const Index rows = shape_numel(a_batch) * m;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<Scalar> out(static_cast<std::size_t>(rows * n));
    MatrixMap<Scalar>(out.data(), rows, n).noalias() =
        ConstMatrixMap<Scalar>(a.data().data(), rows, k) * ConstMatrixMap<Scalar>(b.data().data(), k, n);
    return detail::make_result<Scalar>(std::move(out_shape), std::move(out), {a, b}, [rows, k, n](auto& self) {
      const Scalar* g = self.grad.data();
      const auto& pa = *self.parents[0];
      const auto& pb = *self.parents[1];
      if (Scalar* ga = detail::parent_grad(self, 0)) {
        MatrixMap<Scalar>(ga, rows, k).noalias() +=
            ConstMatrixMap<Scalar>(g, rows, n) * ConstMatrixMap<Scalar>(pb.data.data(), k, n).transpose();
      }
      if (Scalar* gb = detail::parent_grad(self, 1)) {
        MatrixMap<Scalar>(gb, k, n).noalias() +=
            ConstMatrixMap<Scalar>(pa.data.data(), rows, k).transpose() * ConstMatrixMap<Scalar>(g, rows, n);
      }
    });
  }

  Shape out_batch;
  if (a_batch.empty()) {
    out_batch = b_batch;
  } else {
    if (a_batch.size() != b_batch.size()) throw mismatch();
    out_batch.resize(a_batch.size());
    for (std::size_t i = 0; i < a_batch.size(); ++i) {
      if (a_batch[i] != b_batch[i] && a_batch[i] != 1 && b_batch[i] != 1) throw mismatch();
      out_batch[i] = std::max(a_batch[i], b_batch[i]);
    }
  }
  auto a_off = detail::broadcast_offsets(a_batch, out_batch, m * k);
  auto b_off = detail::broadcast_offsets(b_batch, out_batch, k * n);
  const Index slices = shape_numel(out_batch);

  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<Scalar> out(static_cast<std::size_t>(slices * m * n));
  for (Index s = 0; s < slices; ++s) {
    const auto i = static_cast<std::size_t>(s);
    MatrixMap<Scalar>(out.data() + s * m * n, m, n).noalias() =
        ConstMatrixMap<Scalar>(a.data().data() + a_off[i], m, k) * ConstMatrixMap<Scalar>(b.data().data() + b_off[i], k, n);
  }
  return detail::make_result<Scalar>(
      std::move(out_shape), std::move(out), {a, b},
      [m, k, n, slices, a_off = std::move(a_off), b_off = std::move(b_off)](auto& self) {
        const auto& pa = *self.parents[0];
        const auto& pb = *self.parents[1];
        Scalar* ga = detail::parent_grad(self, 0);
        Scalar* gb = detail::parent_grad(self, 1);
        for (Index s = 0; s < slices; ++s) {
          const auto i = static_cast<std::size_t>(s);
          ConstMatrixMap<Scalar> g(self.grad.data() + s * m * n, m, n);
          if (ga) {
            MatrixMap<Scalar>(ga + a_off[i], m, k).noalias() +=
                g * ConstMatrixMap<Scalar>(pb.data.data() + b_off[i], k, n).transpose();
          }
          if (gb) {
            MatrixMap<Scalar>(gb + b_off[i], k, n).noalias() +=
                ConstMatrixMap<Scalar>(pa.data.data() + a_off[i], m, k).transpose() * g;
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [](auto& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Scalar* g = detail::parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (Scalar* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Hadamard product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [](auto& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bd[i];
    }
    if (Scalar* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ad[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, [factor](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    }
  });
}

/// x[..., n] + bias[n].
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || bias.dim(0) != x.dim(-1)) {
    throw DimensionError("add_bias: shapes " + shape_str(x.shape()) + " and " + shape_str(bias.shape()));
  }
  const Index n = bias.dim(0);
  const Index rows = n == 0 ? 0 : x.numel() / n;
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  MatrixMap<Scalar>(out.data(), rows, n).rowwise() += ConstMatrixMap<Scalar>(bias.data().data(), 1, n).row(0);
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x, bias}, [rows, n](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (Scalar* g = detail::parent_grad(self, 1)) {
      MatrixMap<Scalar>(g, 1, n).row(0) += ConstMatrixMap<Scalar>(self.grad.data(), rows, n).colwise().sum();
    }
  });
}

/// Sum of all elements as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar total(0);
  for (Scalar v : x.data()) total += v;
  return detail::make_result<Scalar>(Shape{}, {total}, {x}, [](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      const Scalar d = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += d;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > Scalar(0) ? v : Scalar(0);
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, [](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      const auto& xd = self.parents[0]->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xd[i] > Scalar(0)) g[i] += self.grad[i];
      }
    }
  });
}

/// Copy with a new shape of equal element count.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {x}, [](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// [..., m, n] -> [..., n, m].
template <typename Scalar>
Tensor<Scalar> transpose_last2(const Tensor<Scalar>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2 for " + shape_str(x.shape()));
  const Index m = x.dim(-2), n = x.dim(-1);
  const Index slices = m * n == 0 ? 0 : x.numel() / (m * n);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  for (Index s = 0; s < slices; ++s) {
    MatrixMap<Scalar>(out.data() + s * m * n, n, m) = ConstMatrixMap<Scalar>(x.data().data() + s * m * n, m, n).transpose();
  }
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {x}, [m, n, slices](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (Index s = 0; s < slices; ++s) {
        MatrixMap<Scalar>(g + s * m * n, m, n) += ConstMatrixMap<Scalar>(self.grad.data() + s * m * n, n, m).transpose();
      }
    }
  });
}

/// [a, b, c, d] -> [a, c, b, d]; moves heads next to batch and back.
template <typename Scalar>
Tensor<Scalar> swap_axes_1_2(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw DimensionError("swap_axes_1_2: expected rank 4, got " + shape_str(x.shape()));
  const Index A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  const auto xd = x.data();
  auto src_index = [=](Index a, Index b, Index c) { return ((a * B + b) * C + c) * D; };
  auto dst_index = [=](Index a, Index b, Index c) { return ((a * C + c) * B + b) * D; };
  for (Index a = 0; a < A; ++a)
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c)
        std::copy_n(xd.data() + src_index(a, b, c), D, out.data() + dst_index(a, b, c));
  return detail::make_result<Scalar>(Shape{A, C, B, D}, std::move(out), {x}, [=](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (Index a = 0; a < A; ++a)
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const Scalar* src = self.grad.data() + dst_index(a, b, c);
            Scalar* dst = g + src_index(a, b, c);
            for (Index d = 0; d < D; ++d) dst[d] += src[d];
          }
    }
  });
}

/// Numerically stable softmax over the last axis. A row whose entries are
/// all -inf has no defined distribution and raises NumericError.
template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& x) {
  if (x.rank() < 1 || x.dim(-1) < 1) {
    throw DimensionError("softmax_lastdim: empty last axis in " + shape_str(x.shape()));
  }
  const Index n = x.dim(-1);
  const Index rows = x.numel() / n;
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  const auto xd = x.data();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* in = xd.data() + r * n;
    Scalar* o = out.data() + r * n;
    const Scalar mx = *std::max_element(in, in + n);
    if (mx == -std::numeric_limits<Scalar>::infinity()) {
      throw NumericError("softmax_lastdim: row " + std::to_string(r) + " is fully masked");
    }
    Scalar z(0);
    for (Index j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (Index j = 0; j < n; ++j) o[j] /= z;
  }
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, [rows, n](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (Index r = 0; r < rows; ++r) {
        const Scalar* y = self.data.data() + r * n;
        const Scalar* dy = self.grad.data() + r * n;
        Scalar dot(0);
        for (Index j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (Index j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
      }
    }
  });
}

/// Sets disallowed score entries to -inf. `scores` is [batch, heads, q, k].
template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& scores, const AttentionMask& mask) {
  if (!mask.broadcasts_to(scores.shape())) {
    throw DimensionError("masked_fill: mask " + shape_str(mask.shape) + " does not broadcast to " +
                         shape_str(scores.shape()));
  }
  const Shape& s = scores.shape();
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(scores.numel()));
  std::size_t idx = 0;
  for (Index b = 0; b < s[0]; ++b)
    for (Index h = 0; h < s[1]; ++h)
      for (Index q = 0; q < s[2]; ++q)
        for (Index k = 0; k < s[3]; ++k) keep[idx++] = mask.at(b, h, q, k);
  std::vector<Scalar> out(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!keep[i]) out[i] = -std::numeric_limits<Scalar>::infinity();
  }
  return detail::make_result<Scalar>(s, std::move(out), {scores}, [keep = std::move(keep)](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (keep[i]) g[i] += self.grad[i];
      }
    }
  });
}

/// Per-position normalization over the last axis, then gain * x_hat + bias.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5)) {
  if (x.rank() < 1 || gain.shape() != Shape{x.dim(-1)} || bias.shape() != Shape{x.dim(-1)}) {
    throw DimensionError("layer_norm: x " + shape_str(x.shape()) + ", gain " + shape_str(gain.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  const Index n = x.dim(-1);
  const Index rows = n == 0 ? 0 : x.numel() / n;
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  std::vector<Scalar> x_hat(out.size());
  std::vector<Scalar> rstd(static_cast<std::size_t>(rows));
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* in = xd.data() + r * n;
    Scalar mean(0);
    for (Index j = 0; j < n; ++j) mean += in[j];
    mean /= Scalar(n);
    Scalar var(0);
    for (Index j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= Scalar(n);
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (Index j = 0; j < n; ++j) {
      const Scalar h = (in[j] - mean) * rs;
      x_hat[static_cast<std::size_t>(r * n + j)] = h;
      out[static_cast<std::size_t>(r * n + j)] = gd[static_cast<std::size_t>(j)] * h + bd[static_cast<std::size_t>(j)];
    }
  }
  return detail::make_result<Scalar>(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, n, x_hat = std::move(x_hat), rstd = std::move(rstd)](auto& self) {
        const auto& gd = self.parents[1]->data;
        Scalar* gx = detail::parent_grad(self, 0);
        Scalar* gg = detail::parent_grad(self, 1);
        Scalar* gb = detail::parent_grad(self, 2);
        std::vector<Scalar> dxh(static_cast<std::size_t>(n));
        for (Index r = 0; r < rows; ++r) {
          const Scalar* dy = self.grad.data() + r * n;
          const Scalar* h = x_hat.data() + r * n;
          if (gg || gb) {
            for (Index j = 0; j < n; ++j) {
              if (gg) gg[j] += dy[j] * h[j];
              if (gb) gb[j] += dy[j];
            }
          }
          if (!gx) continue;
          Scalar mean_d(0), mean_dh(0);
          for (Index j = 0; j < n; ++j) {
            dxh[static_cast<std::size_t>(j)] = dy[j] * gd[static_cast<std::size_t>(j)];
            mean_d += dxh[static_cast<std::size_t>(j)];
            mean_dh += dxh[static_cast<std::size_t>(j)] * h[j];
          }
          mean_d /= Scalar(n);
          mean_dh /= Scalar(n);
          const Scalar rs = rstd[static_cast<std::size_t>(r)];
          for (Index j = 0; j < n; ++j) {
            gx[r * n + j] += rs * (dxh[static_cast<std::size_t>(j)] - mean_d - h[j] * mean_dh);
          }
        }
      });
}

/// Rows of `table` [vocab, d] selected by `ids`; backward scatter-adds.
template <typename Scalar>
Tensor<Scalar> embedding_gather(const Tensor<Scalar>& table, std::span<const TokenId> ids) {
  if (table.rank() != 2) throw DimensionError("embedding_gather: table must be rank 2, got " + shape_str(table.shape()));
  const Index vocab = table.dim(0), d = table.dim(1);
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding_gather: id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
  const auto len = static_cast<Index>(ids.size());
  std::vector<Scalar> out(static_cast<std::size_t>(len * d));
  const auto td = table.data();
  for (Index i = 0; i < len; ++i) {
    std::copy_n(td.data() + ids[static_cast<std::size_t>(i)] * d, d, out.data() + i * d);
  }
  std::vector<TokenId> rows(ids.begin(), ids.end());
  return detail::make_result<Scalar>(Shape{len, d}, std::move(out), {table}, [d, rows = std::move(rows)](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Scalar* src = self.grad.data() + static_cast<Index>(i) * d;
        Scalar* dst = g + static_cast<Index>(rows[i]) * d;
        for (Index j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
}

/// Inverted dropout. Outside training, or with p == 0, returns `x` itself.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, bool training, RandomSource* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw UsageError("dropout in training mode needs a RandomSource");
  const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
  std::vector<Scalar> factor(static_cast<std::size_t>(x.numel()));
  for (auto& f : factor) f = rng->uniform() < p ? Scalar(0) : keep_scale;
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, [factor = std::move(factor)](auto& self) {
    if (Scalar* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor[i] * self.grad[i];
    }
  });
}

/// Mean over non-ignored rows of -log softmax(logits)[target]. `logits` is [n, v].
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const TokenId> targets, TokenId ignore_id) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(targets.size())) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const Index rows = logits.dim(0), v = logits.dim(1);
  Index counted = 0;
  for (TokenId t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || t >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(v) + " classes");
    }
    ++counted;
  }
  if (counted == 0) throw UsageError("cross_entropy: every position is ignored, mean is undefined");

  const auto ld = logits.data();
  std::vector<Scalar> probs(static_cast<std::size_t>(rows * v), Scalar(0));
  Scalar loss(0);
  for (Index r = 0; r < rows; ++r) {
    const TokenId t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_id) continue;
    const Scalar* in = ld.data() + r * v;
    Scalar* p = probs.data() + r * v;
    const Scalar mx = *std::max_element(in, in + v);
    Scalar z(0);
    for (Index j = 0; j < v; ++j) z += (p[j] = std::exp(in[j] - mx));
    for (Index j = 0; j < v; ++j) p[j] /= z;
    loss += -(in[t] - mx - std::log(z));
  }
  loss /= Scalar(counted);
  std::vector<TokenId> labels(targets.begin(), targets.end());
  return detail::make_result<Scalar>(
      Shape{}, {loss}, {logits},
      [rows, v, counted, ignore_id, probs = std::move(probs), labels = std::move(labels)](auto& self) {
        if (Scalar* g = detail::parent_grad(self, 0)) {
          const Scalar d = self.grad[0] / Scalar(counted);
          for (Index r = 0; r < rows; ++r) {
            const TokenId t = labels[static_cast<std::size_t>(r)];
            if (t == ignore_id) continue;
            for (Index j = 0; j < v; ++j) g[r * v + j] += d * probs[static_cast<std::size_t>(r * v + j)];
            g[r * v + t] -= d;
          }
        }
      });
}

}  // namespace nmt
