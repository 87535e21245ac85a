#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dycstg/rng.hpp"
#include "dycstg/tensor.hpp"

namespace dycstg {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// true if small is a trailing suffix of big.
inline bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  return true;
}

inline double unit_uniform(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: a [..,m,k] x b [k,n]  (b broadcast over batch), or
//         a [..,m,k] x b [..,k,n] with identical leading dims.
// ---------------------------------------------------------------------------
inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  using namespace detail;
  if (a.ndim() < 2 || b.ndim() < 2)
    throw DimensionError("matmul: both operands need >=2 dims, got " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::int64_t m = a.dim(a.ndim() - 2);
  const std::int64_t k = a.dim(a.ndim() - 1);
  const std::int64_t kb = b.dim(b.ndim() - 2);
  const std::int64_t n = b.dim(b.ndim() - 1);
  if (k != kb)
    throw DimensionError("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);

  const bool batched_b = b.ndim() > 2;
  if (batched_b) {
    Shape ab(a.shape().begin(), a.shape().end() - 2);
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    if (ab != bb)
      throw DimensionError("matmul: batch dims disagree, " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()));
  }

  Tensor out = Tensor::uninit(out_shape);
  const std::int64_t batch = shape_numel(out_shape) / (m * n);

  if (!batched_b) {
    CMapMat A(a.data(), batch * m, k);
    CMapMat B(b.data(), k, n);
    MapMat C(out.data(), batch * m, n);
    C.noalias() = A * B;
  } else {
    for (std::int64_t s = 0; s < batch; ++s) {
      CMapMat A(a.data() + s * m * k, m, k);
      CMapMat B(b.data() + s * k * n, k, n);
      MapMat C(out.data() + s * m * n, m, n);
      C.noalias() = A * B;
    }
  }

  if (tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto ab = a.buffer();
    auto bb = b.buffer();
    auto ob = out.buffer();
    tape->record([ab, bb, ob, m, k, n, batch, batched_b]() {
      if (ob->grad.empty()) return;
      CMapMat G2(ob->grad.data(), batch * m, n);
      if (!batched_b) {
        CMapMat A(ab->values.data(), batch * m, k);
        CMapMat B(bb->values.data(), k, n);
        if (ab->requires_grad) {
          ab->ensure_grad();
          MapMat dA(ab->grad.data(), batch * m, k);
          dA.noalias() += G2 * B.transpose();
        }
        if (bb->requires_grad) {
          bb->ensure_grad();
          MapMat dB(bb->grad.data(), k, n);
          dB.noalias() += A.transpose() * G2;
        }
      } else {
        if (ab->requires_grad) ab->ensure_grad();
        if (bb->requires_grad) bb->ensure_grad();
        for (std::int64_t s = 0; s < batch; ++s) {
          CMapMat A(ab->values.data() + s * m * k, m, k);
          CMapMat B(bb->values.data() + s * k * n, k, n);
          CMapMat G(ob->grad.data() + s * m * n, m, n);
          if (ab->requires_grad) {
            MapMat dA(ab->grad.data() + s * m * k, m, k);
            dA.noalias() += G * B.transpose();
          }
          if (bb->requires_grad) {
            MapMat dB(bb->grad.data() + s * k * n, k, n);
            dB.noalias() += A.transpose() * G;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise add/sub/mul with trailing-suffix broadcast on b.
// ---------------------------------------------------------------------------
namespace detail {

enum class BinKind { Add, Sub, Mul };

inline Tensor binary_op(const Tensor& a, const Tensor& b, Tape* tape, BinKind kind,
                        const char* name) {
  const bool same = a.shape() == b.shape();
  if (!same && !is_suffix(a.shape(), b.shape()))
    throw DimensionError(std::string(name) + ": shape " + shape_str(b.shape()) +
                         " is not broadcastable into " + shape_str(a.shape()));
  const std::size_t nb = b.size();
  const std::size_t na = a.size();
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  switch (kind) {
    case BinKind::Add:
      for (std::size_t i = 0; i < na; ++i) po[i] = pa[i] + pb[i % nb];
      break;
    case BinKind::Sub:
      for (std::size_t i = 0; i < na; ++i) po[i] = pa[i] - pb[i % nb];
      break;
    case BinKind::Mul:
      for (std::size_t i = 0; i < na; ++i) po[i] = pa[i] * pb[i % nb];
      break;
  }
  if (tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto ab = a.buffer();
    auto bb = b.buffer();
    auto ob = out.buffer();
    tape->record([ab, bb, ob, na, nb, kind]() {
      if (ob->grad.empty()) return;
      const double* g = ob->grad.data();
      if (ab->requires_grad) {
        ab->ensure_grad();
        double* da = ab->grad.data();
        const double* pb2 = bb->values.data();
        switch (kind) {
          case BinKind::Add:
          case BinKind::Sub:
            for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
            break;
          case BinKind::Mul:
            for (std::size_t i = 0; i < na; ++i) da[i] += g[i] * pb2[i % nb];
            break;
        }
      }
      if (bb->requires_grad) {
        bb->ensure_grad();
        double* db = bb->grad.data();
        const double* pa2 = ab->values.data();
        switch (kind) {
          case BinKind::Add:
            for (std::size_t i = 0; i < na; ++i) db[i % nb] += g[i];
            break;
          case BinKind::Sub:
            for (std::size_t i = 0; i < na; ++i) db[i % nb] -= g[i];
            break;
          case BinKind::Mul:
            for (std::size_t i = 0; i < na; ++i) db[i % nb] += g[i] * pa2[i];
            break;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return detail::binary_op(a, b, tape, detail::BinKind::Add, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return detail::binary_op(a, b, tape, detail::BinKind::Sub, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return detail::binary_op(a, b, tape, detail::BinKind::Mul, "mul");
}

inline Tensor scale(const Tensor& a, double c, Tape* tape) {
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = c * pa[i];
  if (tracked(tape, {&a})) {
    out.set_requires_grad(true);
    auto ab = a.buffer();
    auto ob = out.buffer();
    tape->record([ab, ob, c]() {
      if (ob->grad.empty() || !ab->requires_grad) return;
      ab->ensure_grad();
      for (std::size_t i = 0; i < ab->grad.size(); ++i) ab->grad[i] += c * ob->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------
inline Tensor sigmoid(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::uninit(x.shape());
  const double* p = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-p[i]));
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      for (std::size_t i = 0; i < xb->grad.size(); ++i) {
        const double y = ob->values[i];
        xb->grad[i] += ob->grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

inline Tensor elu(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::uninit(x.shape());
  const double* p = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = p[i] > 0.0 ? p[i] : std::expm1(p[i]);
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      for (std::size_t i = 0; i < xb->grad.size(); ++i) {
        const double d = xb->values[i] > 0.0 ? 1.0 : ob->values[i] + 1.0;
        xb->grad[i] += ob->grad[i] * d;
      }
    });
  }
  return out;
}

inline Tensor leaky_relu(const Tensor& x, double slope, Tape* tape) {
  Tensor out = Tensor::uninit(x.shape());
  const double* p = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = p[i] > 0.0 ? p[i] : slope * p[i];
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob, slope]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      for (std::size_t i = 0; i < xb->grad.size(); ++i)
        xb->grad[i] += ob->grad[i] * (xb->values[i] > 0.0 ? 1.0 : slope);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat_last_dim
// ---------------------------------------------------------------------------
inline Tensor concat_last_dim(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.ndim() != b.ndim())
    throw DimensionError("concat_last_dim: rank mismatch, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  for (std::size_t i = 0; i + 1 < a.ndim(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw DimensionError("concat_last_dim: leading dims differ, " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
  const std::int64_t da = a.dim(a.ndim() - 1);
  const std::int64_t db = b.dim(b.ndim() - 1);
  Shape out_shape = a.shape();
  out_shape.back() = da + db;
  Tensor out = Tensor::uninit(out_shape);
  const std::int64_t rows = shape_numel(out_shape) / (da + db);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(a.data() + r * da, a.data() + (r + 1) * da, out.data() + r * (da + db));
    std::copy(b.data() + r * db, b.data() + (r + 1) * db, out.data() + r * (da + db) + da);
  }
  if (tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto ab = a.buffer();
    auto bb = b.buffer();
    auto ob = out.buffer();
    tape->record([ab, bb, ob, rows, da, db]() {
      if (ob->grad.empty()) return;
      const double* g = ob->grad.data();
      if (ab->requires_grad) {
        ab->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < da; ++i) ab->grad[r * da + i] += g[r * (da + db) + i];
      }
      if (bb->requires_grad) {
        bb->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < db; ++i)
            bb->grad[r * db + i] += g[r * (da + db) + da + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dim, gain/bias of shape [D].
// ---------------------------------------------------------------------------
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Tape* tape,
                         double eps = 1e-5) {
  const std::int64_t d = x.dim(x.ndim() - 1);
  if (gain.size() != static_cast<std::size_t>(d) || bias.size() != static_cast<std::size_t>(d))
    throw DimensionError("layer_norm: gain/bias must have length " + std::to_string(d));
  const std::int64_t rows = static_cast<std::int64_t>(x.size()) / d;
  Tensor out = Tensor::uninit(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const double xh = (row[i] - mu) * is;
      xhat[static_cast<std::size_t>(r * d + i)] = xh;
      po[r * d + i] = xh * pg[i] + pb[i];
    }
  }
  if (tracked(tape, {&x, &gain, &bias})) {
    out.set_requires_grad(true);
    auto xb2 = x.buffer();
    auto gb = gain.buffer();
    auto bb = bias.buffer();
    auto ob = out.buffer();
    auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
    auto istd_s = std::make_shared<std::vector<double>>(std::move(inv_std));
    tape->record([xb2, gb, bb, ob, xhat_s, istd_s, rows, d]() {
      if (ob->grad.empty()) return;
      const double* g = ob->grad.data();
      const double* xh = xhat_s->data();
      const double* pg2 = gb->values.data();
      if (gb->requires_grad) gb->ensure_grad();
      if (bb->requires_grad) bb->ensure_grad();
      if (xb2->requires_grad) xb2->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double is = (*istd_s)[static_cast<std::size_t>(r)];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
          const double dxh = g[r * d + i] * pg2[i];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh[r * d + i];
        }
        for (std::int64_t i = 0; i < d; ++i) {
          const double gi = g[r * d + i];
          const double xhi = xh[r * d + i];
          if (gb->requires_grad) gb->grad[static_cast<std::size_t>(i)] += gi * xhi;
          if (bb->requires_grad) bb->grad[static_cast<std::size_t>(i)] += gi;
          if (xb2->requires_grad) {
            const double dxh = gi * pg2[i];
            xb2->grad[static_cast<std::size_t>(r * d + i)] +=
                is * (dxh - (sum_dxh + xhi * sum_dxh_xh) / static_cast<double>(d));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// masked_softmax over the last dim. Mask is {0,1} data of the same shape.
// Masked entries come out exactly 0; each row must have >=1 unmasked entry.
// ---------------------------------------------------------------------------
inline Tensor masked_softmax(const Tensor& scores, const Tensor& mask, Tape* tape) {
  detail::check_same_shape(scores, mask, "masked_softmax");
  const std::int64_t d = scores.dim(scores.ndim() - 1);
  const std::int64_t rows = static_cast<std::int64_t>(scores.size()) / d;
  Tensor out = Tensor::uninit(scores.shape());
  const double* ps = scores.data();
  const double* pm = mask.data();
  double* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* srow = ps + r * d;
    const double* mrow = pm + r * d;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::int64_t i = 0; i < d; ++i) {
      const double z = srow[i] + (mrow[i] - 1.0) * 1e9;
      if (mrow[i] != 0.0) any = true;
      mx = std::max(mx, z);
    }
    if (!any)
      throw ContractError("masked_softmax: fully-masked row " + std::to_string(r) +
                          " (self-loop guarantee violated upstream)");
    double denom = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      const double z = srow[i] + (mrow[i] - 1.0) * 1e9;
      po[r * d + i] = std::exp(z - mx);
      denom += po[r * d + i];
    }
    for (std::int64_t i = 0; i < d; ++i) po[r * d + i] = po[r * d + i] / denom * mrow[i];
  }
  if (tracked(tape, {&scores})) {
    out.set_requires_grad(true);
    auto sb = scores.buffer();
    auto ob = out.buffer();
    tape->record([sb, ob, rows, d]() {
      if (ob->grad.empty() || !sb->requires_grad) return;
      sb->ensure_grad();
      const double* g = ob->grad.data();
      const double* y = ob->values.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t i = 0; i < d; ++i) dot += g[r * d + i] * y[r * d + i];
        for (std::int64_t i = 0; i < d; ++i)
          sb->grad[static_cast<std::size_t>(r * d + i)] += y[r * d + i] * (g[r * d + i] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions to scalar.
// ---------------------------------------------------------------------------
inline Tensor sum(const Tensor& x, Tape* tape) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      const double g = ob->grad[0];
      for (auto& v : xb->grad) v += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x, Tape* tape) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s / n);
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob, n]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      const double g = ob->grad[0] / n;
      for (auto& v : xb->grad) v += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// transpose_12: [A,B,C,D] -> [A,C,B,D] (swap axes 1 and 2 of a rank-4 tensor).
// ---------------------------------------------------------------------------
inline Tensor transpose_12(const Tensor& x, Tape* tape) {
  if (x.ndim() != 4)
    throw DimensionError("transpose_12 expects a rank-4 tensor, got " + shape_str(x.shape()));
  const std::int64_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  Tensor out = Tensor::uninit({A, C, B, D});
  const double* p = x.data();
  double* o = out.data();
  for (std::int64_t a = 0; a < A; ++a)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        std::copy(p + ((a * B + b) * C + c) * D, p + ((a * B + b) * C + c + 1) * D,
                  o + ((a * C + c) * B + b) * D);
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob, A, B, C, D]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      const double* g = ob->grad.data();
      for (std::int64_t a = 0; a < A; ++a)
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < D; ++i)
              xb->grad[static_cast<std::size_t>(((a * B + b) * C + c) * D + i)] +=
                  g[((a * C + c) * B + b) * D + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inverted dropout with a counter-based mask so backward regenerates it.
// Pass-through in eval mode.
// ---------------------------------------------------------------------------
inline Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool training,
                      Tape* tape) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: p must be < 1");
  Tensor out = Tensor::uninit(x.shape());
  const double inv_keep = 1.0 / (1.0 - p);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = detail::unit_uniform(mix64(seed + i)) >= p;
    po[i] = keep ? px[i] * inv_keep : 0.0;
  }
  if (tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto ob = out.buffer();
    tape->record([xb, ob, p, seed, inv_keep]() {
      if (ob->grad.empty() || !xb->requires_grad) return;
      xb->ensure_grad();
      for (std::size_t i = 0; i < xb->grad.size(); ++i) {
        const bool keep = detail::unit_uniform(mix64(seed + i)) >= p;
        if (keep) xb->grad[i] += ob->grad[i] * inv_keep;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fused scaled-dot-product multi-head attention over [S,T,D] with an optional
// causal mask. Softmax rows span allowed key steps only; dropout (training)
// applies to the attention weights via a counter-based stream. Backward
// recomputes the weights block-by-block instead of storing S*H*T*T values.
// ---------------------------------------------------------------------------
namespace detail {

// Fills P (T x T, row-major) with softmax(scale * Qh Kh^T) restricted to the
// allowed range; rows beyond the allowed range are exact zeros.
inline void attention_probs_block(const double* q, const double* k, std::int64_t T,
                                  std::int64_t D, std::int64_t h0, std::int64_t dh,
                                  bool causal, double scale, RowMat& P) {
  CStrideMap Qh(q + h0, T, dh, Eigen::OuterStride<>(D));
  CStrideMap Kh(k + h0, T, dh, Eigen::OuterStride<>(D));
  P.noalias() = scale * (Qh * Kh.transpose());
  for (std::int64_t i = 0; i < T; ++i) {
    const std::int64_t lim = causal ? i + 1 : T;
    double mx = P(i, 0);
    for (std::int64_t j = 1; j < lim; ++j) mx = std::max(mx, P(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < lim; ++j) {
      P(i, j) = std::exp(P(i, j) - mx);
      denom += P(i, j);
    }
    for (std::int64_t j = 0; j < lim; ++j) P(i, j) /= denom;
    for (std::int64_t j = lim; j < T; ++j) P(i, j) = 0.0;
  }
}

inline void attention_dropout_block(RowMat& P, std::int64_t T, double p, double inv_keep,
                                    std::uint64_t block_seed) {
  for (std::int64_t i = 0; i < T; ++i)
    for (std::int64_t j = 0; j < T; ++j) {
      const bool keep = unit_uniform(mix64(block_seed + static_cast<std::uint64_t>(i * T + j))) >= p;
      P(i, j) = keep ? P(i, j) * inv_keep : 0.0;
    }
}

}  // namespace detail

inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                             std::int64_t heads, bool causal, double dropout_p,
                             std::uint64_t seed, bool training, Tape* tape) {
  using namespace detail;
  check_same_shape(q, k, "attention_core(q,k)");
  check_same_shape(q, v, "attention_core(q,v)");
  if (q.ndim() != 3)
    throw DimensionError("attention_core expects [S,T,D], got " + shape_str(q.shape()));
  const std::int64_t S = q.dim(0), T = q.dim(1), D = q.dim(2);
  if (D % heads != 0)
    throw DimensionError("attention_core: D=" + std::to_string(D) +
                         " not divisible by heads=" + std::to_string(heads));
  const std::int64_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = training && dropout_p > 0.0;
  const double inv_keep = drop ? 1.0 / (1.0 - dropout_p) : 1.0;

  Tensor out = Tensor::uninit(q.shape());
  RowMat P(T, T);
  for (std::int64_t s = 0; s < S; ++s) {
    const double* qs = q.data() + s * T * D;
    const double* ks = k.data() + s * T * D;
    const double* vs = v.data() + s * T * D;
    double* os = out.data() + s * T * D;
    for (std::int64_t h = 0; h < heads; ++h) {
      const std::int64_t h0 = h * dh;
      attention_probs_block(qs, ks, T, D, h0, dh, causal, sc, P);
      if (drop)
        attention_dropout_block(P, T, dropout_p, inv_keep,
                                mix64(seed ^ static_cast<std::uint64_t>(s * heads + h)));
      CStrideMap Vh(vs + h0, T, dh, Eigen::OuterStride<>(D));
      StrideMap Oh(os + h0, T, dh, Eigen::OuterStride<>(D));
      Oh.noalias() = P * Vh;
    }
  }

  if (tracked(tape, {&q, &k, &v})) {
    out.set_requires_grad(true);
    auto qb = q.buffer();
    auto kb = k.buffer();
    auto vb = v.buffer();
    auto ob = out.buffer();
    tape->record([qb, kb, vb, ob, S, T, D, heads, dh, sc, causal, drop, dropout_p, inv_keep,
                  seed]() {
      if (ob->grad.empty()) return;
      qb->ensure_grad();
      kb->ensure_grad();
      vb->ensure_grad();
      RowMat P(T, T), Pd(T, T), dP(T, T), dS(T, T);
      for (std::int64_t s = 0; s < S; ++s) {
        const double* qs = qb->values.data() + s * T * D;
        const double* ks = kb->values.data() + s * T * D;
        const double* vs = vb->values.data() + s * T * D;
        const double* gs = ob->grad.data() + s * T * D;
        for (std::int64_t h = 0; h < heads; ++h) {
          const std::int64_t h0 = h * dh;
          attention_probs_block(qs, ks, T, D, h0, dh, causal, sc, P);
          CStrideMap Vh(vs + h0, T, dh, Eigen::OuterStride<>(D));
          CStrideMap Gh(gs + h0, T, dh, Eigen::OuterStride<>(D));
          StrideMap dVh(vb->grad.data() + s * T * D + h0, T, dh, Eigen::OuterStride<>(D));
          StrideMap dQh(qb->grad.data() + s * T * D + h0, T, dh, Eigen::OuterStride<>(D));
          StrideMap dKh(kb->grad.data() + s * T * D + h0, T, dh, Eigen::OuterStride<>(D));
          if (drop) {
            Pd = P;
            attention_dropout_block(Pd, T, dropout_p, inv_keep,
                                    mix64(seed ^ static_cast<std::uint64_t>(s * heads + h)));
            dVh.noalias() += Pd.transpose() * Gh;
            dP.noalias() = Gh * Vh.transpose();
            // route through the dropout mask: kept entries carry 1/(1-p)
            const std::uint64_t bs =
                mix64(seed ^ static_cast<std::uint64_t>(s * heads + h));
            for (std::int64_t i = 0; i < T; ++i)
              for (std::int64_t j = 0; j < T; ++j) {
                const bool keep =
                    unit_uniform(mix64(bs + static_cast<std::uint64_t>(i * T + j))) >= dropout_p;
                dP(i, j) = keep ? dP(i, j) * inv_keep : 0.0;
              }
          } else {
            dVh.noalias() += P.transpose() * Gh;
            dP.noalias() = Gh * Vh.transpose();
          }
          for (std::int64_t i = 0; i < T; ++i) {
            const std::int64_t lim = causal ? i + 1 : T;
            double dot = 0.0;
            for (std::int64_t j = 0; j < lim; ++j) dot += dP(i, j) * P(i, j);
            for (std::int64_t j = 0; j < lim; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot);
            for (std::int64_t j = lim; j < T; ++j) dS(i, j) = 0.0;
          }
          CStrideMap Qh(qs + h0, T, dh, Eigen::OuterStride<>(D));
          CStrideMap Kh(ks + h0, T, dh, Eigen::OuterStride<>(D));
          dQh.noalias() += sc * (dS * Kh);
          dKh.noalias() += sc * (dS.transpose() * Qh);
        }
      }
    });
  }
  return out;
}

// Eval-mode attention weights [S,heads,T,T]; for tests and inspection.
inline Tensor attention_weights_eval(const Tensor& q, const Tensor& k, std::int64_t heads,
                                     bool causal) {
  using namespace detail;
  const std::int64_t S = q.dim(0), T = q.dim(1), D = q.dim(2);
  const std::int64_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out = Tensor::uninit({S, heads, T, T});
  RowMat P(T, T);
  for (std::int64_t s = 0; s < S; ++s)
    for (std::int64_t h = 0; h < heads; ++h) {
      attention_probs_block(q.data() + s * T * D, k.data() + s * T * D, T, D, h * dh, dh,
                            causal, sc, P);
      std::copy(P.data(), P.data() + T * T, out.data() + (s * heads + h) * T * T);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Outer sum for GAT scoring: out[b,i,j] = left[b,i] + right[b,j].
// ---------------------------------------------------------------------------
inline Tensor pairwise_sum(const Tensor& left, const Tensor& right, Tape* tape) {
  detail::check_same_shape(left, right, "pairwise_sum");
  if (left.ndim() != 2)
    throw DimensionError("pairwise_sum expects [B,N], got " + shape_str(left.shape()));
  const std::int64_t B = left.dim(0), N = left.dim(1);
  Tensor out = Tensor::uninit({B, N, N});
  const double* pl = left.data();
  const double* pr = right.data();
  double* po = out.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < N; ++i)
      for (std::int64_t j = 0; j < N; ++j)
        po[(b * N + i) * N + j] = pl[b * N + i] + pr[b * N + j];
  if (tracked(tape, {&left, &right})) {
    out.set_requires_grad(true);
    auto lb = left.buffer();
    auto rb = right.buffer();
    auto ob = out.buffer();
    tape->record([lb, rb, ob, B, N]() {
      if (ob->grad.empty()) return;
      const double* g = ob->grad.data();
      if (lb->requires_grad) lb->ensure_grad();
      if (rb->requires_grad) rb->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < N; ++i)
          for (std::int64_t j = 0; j < N; ++j) {
            const double gij = g[(b * N + i) * N + j];
            if (lb->requires_grad) lb->grad[static_cast<std::size_t>(b * N + i)] += gij;
            if (rb->requires_grad) rb->grad[static_cast<std::size_t>(b * N + j)] += gij;
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fused affine map out = x W + b over the last dim. One stored tensor instead
// of two; bias may be omitted (undefined Tensor).
// ---------------------------------------------------------------------------
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  using namespace detail;
  const std::int64_t k = x.dim(x.ndim() - 1);
  if (w.ndim() != 2 || w.dim(0) != k)
    throw DimensionError("linear: weight " + shape_str(w.shape()) + " does not accept " +
                         shape_str(x.shape()));
  const std::int64_t n = w.dim(1);
  if (b.defined() && b.size() != static_cast<std::size_t>(n))
    throw DimensionError("linear: bias length mismatch");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out = Tensor::uninit(out_shape);
  const std::int64_t rows = static_cast<std::int64_t>(x.size()) / k;
  {
    CMapMat X(x.data(), rows, k);
    CMapMat W(w.data(), k, n);
    MapMat O(out.data(), rows, n);
    O.noalias() = X * W;
    if (b.defined()) O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), n);
  }
  const bool has_b = b.defined();
  if (tracked(tape, {&x, &w}) || (has_b && tracked(tape, {&b}))) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto wb = w.buffer();
    auto bb = has_b ? b.buffer() : nullptr;
    auto ob = out.buffer();
    tape->record([xb, wb, bb, ob, rows, k, n]() {
      if (ob->grad.empty()) return;
      CMapMat G(ob->grad.data(), rows, n);
      if (xb->requires_grad) {
        xb->ensure_grad();
        MapMat dX(xb->grad.data(), rows, k);
        CMapMat W(wb->values.data(), k, n);
        dX.noalias() += G * W.transpose();
      }
      if (wb->requires_grad) {
        wb->ensure_grad();
        MapMat dW(wb->grad.data(), k, n);
        CMapMat X(xb->values.data(), rows, k);
        dW.noalias() += X.transpose() * G;
      }
      if (bb && bb->requires_grad) {
        bb->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd> dB(bb->grad.data(), n);
        dB.noalias() += G.colwise().sum();
      }
    });
  }
  return out;
}

// out = ELU(x W + b), storing only the output (ELU'(z) is recoverable from
// the output sign: z > 0 iff out > 0, else ELU' = out + 1).
inline Tensor linear_elu(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  using namespace detail;
  const std::int64_t k = x.dim(x.ndim() - 1);
  if (w.ndim() != 2 || w.dim(0) != k)
    throw DimensionError("linear_elu: weight " + shape_str(w.shape()) + " does not accept " +
                         shape_str(x.shape()));
  const std::int64_t n = w.dim(1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out = Tensor::uninit(out_shape);
  const std::int64_t rows = static_cast<std::int64_t>(x.size()) / k;
  {
    CMapMat X(x.data(), rows, k);
    CMapMat W(w.data(), k, n);
    MapMat O(out.data(), rows, n);
    O.noalias() = X * W;
    if (b.defined()) O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), n);
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out.data()[i] <= 0.0) out.data()[i] = std::expm1(out.data()[i]);
  const bool has_b = b.defined();
  if (tracked(tape, {&x, &w}) || (has_b && tracked(tape, {&b}))) {
    out.set_requires_grad(true);
    auto xb = x.buffer();
    auto wb = w.buffer();
    auto bb = has_b ? b.buffer() : nullptr;
    auto ob = out.buffer();
    tape->record([xb, wb, bb, ob, rows, k, n]() {
      if (ob->grad.empty()) return;
      std::vector<double> dz(ob->grad.size());
      for (std::size_t i = 0; i < dz.size(); ++i) {
        const double y = ob->values[i];
        dz[i] = ob->grad[i] * (y > 0.0 ? 1.0 : y + 1.0);
      }
      CMapMat G(dz.data(), rows, n);
      if (xb->requires_grad) {
        xb->ensure_grad();
        MapMat dX(xb->grad.data(), rows, k);
        CMapMat W(wb->values.data(), k, n);
        dX.noalias() += G * W.transpose();
      }
      if (wb->requires_grad) {
        wb->ensure_grad();
        MapMat dW(wb->grad.data(), k, n);
        CMapMat X(xb->values.data(), rows, k);
        dW.noalias() += X.transpose() * G;
      }
      if (bb && bb->requires_grad) {
        bb->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd> dB(bb->grad.data(), n);
        dB.noalias() += G.colwise().sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Focal loss, mean over all points. labels in {0,1}, 1 = trustworthy.
// Scores are clamped to [1e-7, 1-1e-7] before the log.
// ---------------------------------------------------------------------------
inline Tensor focal_loss(const Tensor& scores, const Tensor& labels, double alpha,
                         double gamma, Tape* tape) {
  detail::check_same_shape(scores, labels, "focal_loss");
  constexpr double kClamp = 1e-7;
  const std::size_t n = scores.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(scores.data()[i], kClamp, 1.0 - kClamp);
    if (labels.data()[i] > 0.5)
      total += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    else
      total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  if (tracked(tape, {&scores})) {
    out.set_requires_grad(true);
    auto sb = scores.buffer();
    auto lb = labels.buffer();
    auto ob = out.buffer();
    tape->record([sb, lb, ob, alpha, gamma, n]() {
      if (ob->grad.empty() || !sb->requires_grad) return;
      sb->ensure_grad();
      const double g = ob->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double raw = sb->values[i];
        if (raw < kClamp || raw > 1.0 - kClamp) continue;  // clamped region: flat
        const double p = raw;
        double dp;
        if (lb->values[i] > 0.5) {
          const double omp = 1.0 - p;
          const double powg = std::pow(omp, gamma);
          const double powg1 = gamma > 0.0 ? gamma * std::pow(omp, gamma - 1.0) : 0.0;
          dp = powg1 * std::log(p) * alpha - alpha * powg / p;
        } else {
          const double powg = std::pow(p, gamma);
          const double powg1 = gamma > 0.0 ? gamma * std::pow(p, gamma - 1.0) : 0.0;
          dp = -(1.0 - alpha) * (powg1 * std::log(1.0 - p) - powg / (1.0 - p));
        }
        sb->grad[i] += g * dp;
      }
    });
  }
  return out;
}

}  // namespace dycstg
