#ifndef UNMAR_OPS_HPP
#define UNMAR_OPS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "unmar/tape.hpp"
#include "unmar/tensor.hpp"

// Differentiable primitives. Every op takes the tape as first argument; a
// null tape runs the pure forward (no recording, outputs do not require
// grad). Inputs are never mutated.

namespace unmar {

namespace detail {

inline bool recording(const Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXf;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ColMap = Eigen::Map<ColMat>;
using ConstColMap = Eigen::Map<const ColMat>;

}  // namespace detail

// ===== Elementwise arithmetic =====

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  if (detail::recording(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      if (ta.requires_grad()) ta.accumulate_grad(to.grad());
      if (tb.requires_grad()) tb.accumulate_grad(to.grad());
    });
  }
  return out;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  if (detail::recording(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      if (ta.requires_grad()) ta.accumulate_grad(go);
      if (tb.requires_grad()) {
        std::vector<float> neg(go.begin(), go.end());
        for (float& v : neg) v = -v;
        tb.accumulate_grad(neg);
      }
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  if (detail::recording(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      int64_t n = to.numel();
      std::vector<float> g(n);
      if (ta.requires_grad()) {
        const float* pb2 = tb.data();
        for (int64_t i = 0; i < n; ++i) g[i] = go[i] * pb2[i];
        ta.accumulate_grad(g);
      }
      if (tb.requires_grad()) {
        const float* pa2 = ta.data();
        for (int64_t i = 0; i < n; ++i) g[i] = go[i] * pa2[i];
        tb.accumulate_grad(g);
      }
    });
  }
  return out;
}

/// Elementwise quotient. The denominator must be nonzero everywhere.
inline Tensor div(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] / pb[i];
  if (detail::recording(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      int64_t n = to.numel();
      std::vector<float> g(n);
      const float* pa2 = ta.data();
      const float* pb2 = tb.data();
      if (ta.requires_grad()) {
        for (int64_t i = 0; i < n; ++i) g[i] = go[i] / pb2[i];
        ta.accumulate_grad(g);
      }
      if (tb.requires_grad()) {
        for (int64_t i = 0; i < n; ++i)
          g[i] = -go[i] * pa2[i] / (pb2[i] * pb2[i]);
        tb.accumulate_grad(g);
      }
    });
  }
  return out;
}

inline Tensor scalar_mul(Tape* tape, const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * c;
  if (detail::recording(tape, {&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    tape->record([ta, to, c]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      std::vector<float> g(go.size());
      for (size_t i = 0; i < g.size(); ++i) g[i] = go[i] * c;
      ta.accumulate_grad(g);
    });
  }
  return out;
}

inline Tensor scalar_add(Tape* tape, const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + c;
  if (detail::recording(tape, {&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    tape->record([ta, to]() mutable {
      if (!to.has_grad()) return;
      ta.accumulate_grad(to.grad());
    });
  }
  return out;
}

/// Elementwise square root; backward denominator guarded by 1e-12.
inline Tensor sqrt(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::sqrt(pa[i]);
  if (detail::recording(tape, {&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    tape->record([ta, to]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      const float* px = ta.data();
      std::vector<float> g(go.size());
      for (size_t i = 0; i < g.size(); ++i)
        g[i] = go[i] * 0.5f / std::sqrt(std::max(px[i], 1e-12f));
      ta.accumulate_grad(g);
    });
  }
  return out;
}

// ===== Activations =====

inline Tensor leaky_relu(Tape* tape, const Tensor& x, float slope) {
  if (!(slope > 0.0f && slope < 1.0f))
    throw ConfigError(fmt::format("leaky_relu: slope {} outside (0,1)", slope));
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    po[i] = px[i] >= 0.0f ? px[i] : slope * px[i];
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, slope]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      const float* px2 = tx.data();
      std::vector<float> g(go.size());
      for (size_t i = 0; i < g.size(); ++i)
        g[i] = go[i] * (px2[i] >= 0.0f ? 1.0f : slope);
      tx.accumulate_grad(g);
    });
  }
  return out;
}

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) {
    float v = px[i];
    // split by sign so exp never overflows
    po[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                      : std::exp(v) / (1.0f + std::exp(v));
  }
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      const float* ps = to.data();
      std::vector<float> g(go.size());
      for (size_t i = 0; i < g.size(); ++i)
        g[i] = go[i] * ps[i] * (1.0f - ps[i]);
      tx.accumulate_grad(g);
    });
  }
  return out;
}

// ===== Reductions =====

inline Tensor reduce_mean(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, n]() mutable {
      if (!to.has_grad()) return;
      float g0 = to.grad()[0] / static_cast<float>(n);
      std::vector<float> g(static_cast<size_t>(n), g0);
      tx.accumulate_grad(g);
    });
  }
  return out;
}

/// mean |a - b|; the shared kernel of the L1 loss and the |D-1| adversarial
/// form. Subgradient at ties is 0.
inline Tensor reduce_abs_mean(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("reduce_abs_mean", a, b);
  const float* pa = a.data();
  const float* pb = b.data();
  int64_t n = a.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::fabs(double(pa[i]) - double(pb[i]));
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (detail::recording(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to, n]() mutable {
      if (!to.has_grad()) return;
      float g0 = to.grad()[0] / static_cast<float>(n);
      const float* pa2 = ta.data();
      const float* pb2 = tb.data();
      std::vector<float> g(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        float d = pa2[i] - pb2[i];
        g[i] = d > 0.0f ? g0 : (d < 0.0f ? -g0 : 0.0f);
      }
      if (ta.requires_grad()) ta.accumulate_grad(g);
      if (tb.requires_grad()) {
        for (float& v : g) v = -v;
        tb.accumulate_grad(g);
      }
    });
  }
  return out;
}

// ===== Spatial ops =====

inline Tensor global_avg_pool(Tape* tape, const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeError(fmt::format("global_avg_pool: expected NCHW, got {}",
                                 shape_str(x.shape())));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({N, C, 1, 1});
  const float* px = x.data();
  float* po = out.data();
  int64_t hw = int64_t(H) * W;
  for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
    double acc = 0.0;
    const float* p = px + nc * hw;
    for (int64_t i = 0; i < hw; ++i) acc += p[i];
    po[nc] = static_cast<float>(acc / static_cast<double>(hw));
  }
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, N, C, hw]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      std::vector<float> g(static_cast<size_t>(tx.numel()));
      for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        float v = go[nc] / static_cast<float>(hw);
        for (int64_t i = 0; i < hw; ++i) g[nc * hw + i] = v;
      }
      tx.accumulate_grad(g);
    });
  }
  return out;
}

/// Per-channel gating: out[n,c,h,w] = x[n,c,h,w] * gate[n,c,0,0].
inline Tensor channel_scale(Tape* tape, const Tensor& x, const Tensor& gate) {
  if (x.rank() != 4 || gate.rank() != 4)
    throw ShapeError("channel_scale: expected NCHW inputs");
  if (gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1) ||
      gate.dim(2) != 1 || gate.dim(3) != 1)
    throw ShapeError(fmt::format(
        "channel_scale: gate shape {} does not match input {} (want [N,C,1,1])",
        shape_str(gate.shape()), shape_str(x.shape())));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t hw = int64_t(H) * W;
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pg = gate.data();
  float* po = out.data();
  for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
    float s = pg[nc];
    const float* p = px + nc * hw;
    float* q = po + nc * hw;
    for (int64_t i = 0; i < hw; ++i) q[i] = p[i] * s;
  }
  if (detail::recording(tape, {&x, &gate})) {
    out.set_requires_grad(true);
    Tensor tx = x, tg = gate, to = out;
    tape->record([tx, tg, to, N, C, hw]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      const float* px2 = tx.data();
      const float* pg2 = tg.data();
      if (tx.requires_grad()) {
        std::vector<float> g(static_cast<size_t>(tx.numel()));
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
          float s = pg2[nc];
          for (int64_t i = 0; i < hw; ++i) g[nc * hw + i] = go[nc * hw + i] * s;
        }
        tx.accumulate_grad(g);
      }
      if (tg.requires_grad()) {
        std::vector<float> g(static_cast<size_t>(int64_t(N) * C));
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
          double acc = 0.0;
          for (int64_t i = 0; i < hw; ++i)
            acc += double(go[nc * hw + i]) * double(px2[nc * hw + i]);
          g[nc] = static_cast<float>(acc);
        }
        tg.accumulate_grad(g);
      }
    });
  }
  return out;
}

// ===== Convolution =====

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Reusable per-thread scratch for the conv lowering buffers. Fresh
// multi-megabyte vectors per call would bounce pages through the allocator
// on every training step; these grow once and stay hot.
inline float* conv_scratch(int slot, size_t n) {
  static thread_local std::vector<float> bufs[2];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Gathers conv patches into a (C*kh*kw) x (H'*W') row-major matrix; rows are
// contiguous so the inner loops stream (memcpy for the stride-1 interior).
inline void im2col(const float* x, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int Ho, int Wo, float* col) {
  const int64_t P = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const float* xc = x + int64_t(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        int64_t r = (int64_t(c) * kh + ki) * kw + kj;
        float* dst = col + r * P;
        for (int oy = 0; oy < Ho; ++oy) {
          int y = oy * stride - pad + ki;
          float* drow = dst + int64_t(oy) * Wo;
          if (y < 0 || y >= H) {
            std::fill(drow, drow + Wo, 0.0f);
            continue;
          }
          const float* row = xc + int64_t(y) * W;
          if (stride == 1) {
            const int x0 = kj - pad;  // source x for ox = 0
            const int lo = std::max(0, -x0);
            const int hi = std::max(lo, std::min(Wo, W - x0));
            std::fill(drow, drow + lo, 0.0f);
            if (hi > lo)
              std::memcpy(drow + lo, row + x0 + lo,
                          static_cast<size_t>(hi - lo) * sizeof(float));
            std::fill(drow + hi, drow + Wo, 0.0f);
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              int xcoord = ox * stride - pad + kj;
              drow[ox] = (xcoord >= 0 && xcoord < W) ? row[xcoord] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back onto the input layout (adjoint of im2col).
inline void col2im_add(const float* col, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int Ho, int Wo, float* x) {
  const int64_t P = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    float* xc = x + int64_t(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        int64_t r = (int64_t(c) * kh + ki) * kw + kj;
        const float* src = col + r * P;
        for (int oy = 0; oy < Ho; ++oy) {
          int y = oy * stride - pad + ki;
          if (y < 0 || y >= H) continue;
          float* row = xc + int64_t(y) * W;
          const float* srow = src + int64_t(oy) * Wo;
          if (stride == 1) {
            const int x0 = kj - pad;
            const int lo = std::max(0, -x0);
            const int hi = std::max(lo, std::min(Wo, W - x0));
            for (int ox = lo; ox < hi; ++ox) row[x0 + ox] += srow[ox];
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              int xcoord = ox * stride - pad + kj;
              if (xcoord >= 0 && xcoord < W) row[xcoord] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation over NCHW input with OIHW weights and optional [K]
/// bias. Output extent uses floor arithmetic: (H + 2*pad - kh)/stride + 1.
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w,
                     const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4)
    throw ShapeError(fmt::format("conv2d: input must be NCHW, got {}",
                                 shape_str(x.shape())));
  if (w.rank() != 4)
    throw ShapeError(fmt::format("conv2d: weight must be [K,C,kh,kw], got {}",
                                 shape_str(w.shape())));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeError(fmt::format(
        "conv2d: input channels (input axis 1 = {}) vs weight channels "
        "(weight axis 1 = {})", C, w.dim(1)));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError(fmt::format("conv2d: kernel extents must be odd, got {}x{}",
                                 kh, kw));
  if (stride < 1 || padding < 0)
    throw ConfigError(fmt::format("conv2d: stride {} / padding {}", stride, padding));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != K))
    throw ShapeError(fmt::format("conv2d: bias shape {} vs K={} (weight axis 0)",
                                 shape_str(bias.shape()), K));
  const int Ho = detail::conv_out_extent(H, kh, stride, padding);
  const int Wo = detail::conv_out_extent(W, kw, stride, padding);
  if (Ho < 1 || Wo < 1)
    throw ShapeError(fmt::format(
        "conv2d: input {}x{} too small for kernel {}x{} stride {} pad {}",
        H, W, kh, kw, stride, padding));

  const int64_t CKK = int64_t(C) * kh * kw;
  const int64_t P = int64_t(Ho) * Wo;
  Tensor out = Tensor::zeros({N, K, Ho, Wo});

  {
    float* col = detail::conv_scratch(0, static_cast<size_t>(CKK * P));
    detail::ConstRowMap Wm(w.data(), K, CKK);
    for (int n = 0; n < N; ++n) {
      detail::im2col(x.data() + int64_t(n) * C * H * W, C, H, W, kh, kw,
                     stride, padding, Ho, Wo, col);
      detail::ConstRowMap colm(col, CKK, P);
      detail::RowMap Om(out.data() + int64_t(n) * K * P, K, P);
      Om.noalias() = Wm * colm;
      if (bias.defined()) {
        const float* pb = bias.data();
        for (int k = 0; k < K; ++k) Om.row(k).array() += pb[k];
      }
    }
  }

  if (detail::recording(tape, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tw = w, tb = bias, to = out;
    tape->record([tx, tw, tb, to, N, C, H, W, K, kh, kw, stride, padding, Ho,
                  Wo, CKK, P]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      float* col = detail::conv_scratch(0, static_cast<size_t>(CKK * P));
      float* dcol = detail::conv_scratch(1, static_cast<size_t>(CKK * P));
      detail::ConstRowMap Wm(tw.data(), K, CKK);

      std::vector<float> wgrad;
      if (tw.requires_grad()) wgrad.assign(static_cast<size_t>(K * CKK), 0.0f);
      std::vector<float> bgrad;
      if (tb.defined() && tb.requires_grad()) bgrad.assign(K, 0.0f);
      std::vector<float> xgrad;
      if (tx.requires_grad())
        xgrad.assign(static_cast<size_t>(tx.numel()), 0.0f);

      for (int n = 0; n < N; ++n) {
        detail::ConstRowMap Go(go.data() + int64_t(n) * K * P, K, P);
        if (tw.requires_grad()) {
          detail::im2col(tx.data() + int64_t(n) * C * H * W, C, H, W, kh, kw,
                         stride, padding, Ho, Wo, col);
          detail::ConstRowMap colm(col, CKK, P);
          detail::RowMap Wg(wgrad.data(), K, CKK);
          Wg.noalias() += Go * colm.transpose();
        }
        if (!bgrad.empty())
          for (int k = 0; k < K; ++k) bgrad[k] += Go.row(k).sum();
        if (tx.requires_grad()) {
          detail::RowMap dcolm(dcol, CKK, P);
          dcolm.noalias() = Wm.transpose() * Go;
          detail::col2im_add(dcol, C, H, W, kh, kw, stride, padding, Ho,
                             Wo, xgrad.data() + int64_t(n) * C * H * W);
        }
      }
      if (tw.requires_grad()) tw.accumulate_grad(wgrad);
      if (!bgrad.empty()) tb.accumulate_grad(bgrad);
      if (tx.requires_grad()) tx.accumulate_grad(xgrad);
    });
  }
  return out;
}

// ===== Batch normalization =====

enum class BnMode { kTrain, kEval };

/// Per-channel batch normalization over NCHW. Train mode normalizes by batch
/// statistics, updates the running buffers in place (biased variance for
/// normalization, unbiased for the running estimate) and records gradients.
/// Eval mode applies the running statistics and records nothing.
inline Tensor batch_norm2d(Tape* tape, const Tensor& x, const Tensor& gamma,
                           const Tensor& beta, Tensor& running_mean,
                           Tensor& running_var, BnMode mode,
                           float momentum = 0.1f, float eps = 1e-5f) {
  if (x.rank() != 4)
    throw ShapeError(fmt::format("batch_norm2d: expected NCHW, got {}",
                                 shape_str(x.shape())));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Tensor* chans[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor* t : chans)
    if (t->rank() != 1 || t->dim(0) != C)
      throw ShapeError(fmt::format(
          "batch_norm2d: parameter shape {} vs channel count (input axis 1) {}",
          shape_str(t->shape()), C));
  const int64_t M = int64_t(N) * H * W;  // reduction extent per channel
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();
  const int64_t hw = int64_t(H) * W;
  const int64_t chw = int64_t(C) * hw;

  if (mode == BnMode::kEval) {
    const float* rm = running_mean.data();
    const float* rv = running_var.data();
    for (int c = 0; c < C; ++c) {
      float inv = 1.0f / std::sqrt(rv[c] + eps);
      for (int n = 0; n < N; ++n) {
        const float* p = px + n * chw + c * hw;
        float* q = po + n * chw + c * hw;
        for (int64_t i = 0; i < hw; ++i)
          q[i] = pg[c] * (p[i] - rm[c]) * inv + pb[c];
      }
    }
    return out;
  }

  if (M < 2)
    throw ShapeError(fmt::format(
        "batch_norm2d: train mode needs N*H*W >= 2 per channel, got {}", M));

  std::vector<float> mean(C), invstd(C);
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(x.numel()));
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* p = px + n * chw + c * hw;
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
    }
    double m = acc / static_cast<double>(M);
    double vacc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* p = px + n * chw + c * hw;
      for (int64_t i = 0; i < hw; ++i) {
        double d = p[i] - m;
        vacc += d * d;
      }
    }
    double var = vacc / static_cast<double>(M);
    mean[c] = static_cast<float>(m);
    invstd[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
    float* rm = running_mean.data();
    float* rv = running_var.data();
    double var_unbiased = vacc / static_cast<double>(M - 1);
    rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(m);
    rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(var_unbiased);
    for (int n = 0; n < N; ++n) {
      const float* p = px + n * chw + c * hw;
      float* xh = xhat->data() + n * chw + c * hw;
      float* q = po + n * chw + c * hw;
      for (int64_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - mean[c]) * invstd[c];
        q[i] = pg[c] * xh[i] + pb[c];
      }
    }
  }

  if (detail::recording(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor tx = x, tg = gamma, tb = beta, to = out;
    tape->record([tx, tg, tb, to, xhat, invstd, N, C, hw, chw, M]() mutable {
      if (!to.has_grad()) return;
      auto go = to.grad();
      const float* pg2 = tg.data();
      std::vector<float> dgamma(C, 0.0f), dbeta(C, 0.0f);
      std::vector<float> gx;
      if (tx.requires_grad()) gx.assign(static_cast<size_t>(tx.numel()), 0.0f);
      for (int c = 0; c < C; ++c) {
        double sum_go = 0.0, sum_go_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
          const float* g = go.data() + n * chw + c * hw;
          const float* xh = xhat->data() + n * chw + c * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_go += g[i];
            sum_go_xhat += double(g[i]) * double(xh[i]);
          }
        }
        dbeta[c] = static_cast<float>(sum_go);
        dgamma[c] = static_cast<float>(sum_go_xhat);
        if (tx.requires_grad()) {
          float mean_go = static_cast<float>(sum_go / static_cast<double>(M));
          float mean_go_xhat =
              static_cast<float>(sum_go_xhat / static_cast<double>(M));
          float scale = pg2[c] * invstd[c];
          for (int n = 0; n < N; ++n) {
            const float* g = go.data() + n * chw + c * hw;
            const float* xh = xhat->data() + n * chw + c * hw;
            float* q = gx.data() + n * chw + c * hw;
            for (int64_t i = 0; i < hw; ++i)
              q[i] = scale * (g[i] - mean_go - xh[i] * mean_go_xhat);
          }
        }
      }
      if (tg.requires_grad()) tg.accumulate_grad(dgamma);
      if (tb.requires_grad()) tb.accumulate_grad(dbeta);
      if (tx.requires_grad()) tx.accumulate_grad(gx);
    });
  }
  return out;
}

}  // namespace unmar

#endif  // UNMAR_OPS_HPP
