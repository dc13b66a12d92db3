#pragma once

// Differentiable kernels over Tensor<S>. Every op computes its output eagerly,
// then (when a tape is present and some input wants gradients) records a pull
// closure that accumulates into input .grad buffers given output .grad.
//
// Binary ops broadcast with trailing-dimension alignment: shapes are aligned
// at their last dimension, missing leading dimensions count as 1, and a
// dimension of 1 stretches. Gradients sum over stretched dimensions.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "t2diff/tensor.hpp"

namespace t2diff {

namespace detail {

template <typename S>
void ensure_impl_grad(TensorImpl<S>* t) {
  if (t->grad.size() != t->data->size()) t->grad.assign(t->data->size(), S(0));
}

constexpr int kMaxRank = 4;

// Broadcast plan for a binary op: padded output extents plus per-input strides
// (0 where the input is stretched).
struct BPlan {
  std::int64_t od[kMaxRank];
  std::int64_t as[kMaxRank];
  std::int64_t bs[kMaxRank];
  Shape out_shape;
  bool same_shape;
  std::int64_t n;  // output element count
};

inline BPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  const int ra = (int)a.size(), rb = (int)b.size();
  const int r = std::max(ra, rb);
  if (r > kMaxRank)
    throw shape_error(std::string(op) + ": rank " + std::to_string(r) + " not supported");
  BPlan p;
  p.out_shape.resize((std::size_t)r);
  std::int64_t ad[kMaxRank], bd[kMaxRank];
  for (int k = 0; k < kMaxRank; ++k) {
    p.od[k] = 1;
    ad[k] = 1;
    bd[k] = 1;
  }
  for (int k = 0; k < r; ++k) {
    const int da = (k >= r - ra) ? a[(std::size_t)(k - (r - ra))] : 1;
    const int db = (k >= r - rb) ? b[(std::size_t)(k - (r - rb))] : 1;
    if (da != db && da != 1 && db != 1)
      throw shape_error(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                        shape_str(b));
    const int d = std::max(da, db);
    p.out_shape[(std::size_t)k] = d;
    p.od[kMaxRank - r + k] = d;
    ad[kMaxRank - r + k] = da;
    bd[kMaxRank - r + k] = db;
  }
  auto strides = [](const std::int64_t d[kMaxRank], std::int64_t s[kMaxRank]) {
    std::int64_t acc = 1;
    for (int k = kMaxRank - 1; k >= 0; --k) {
      s[k] = (d[k] == 1) ? 0 : acc;
      acc *= d[k];
    }
  };
  strides(ad, p.as);
  strides(bd, p.bs);
  p.same_shape = (a == b);
  p.n = numel_of(p.out_shape);
  return p;
}

// Visits every output index of a broadcast plan with the two input offsets.
template <typename F>
void bcast_for_each(const BPlan& p, F&& f) {
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < p.od[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < p.od[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < p.od[2]; ++i2) {
        std::int64_t ao = i0 * p.as[0] + i1 * p.as[1] + i2 * p.as[2];
        std::int64_t bo = i0 * p.bs[0] + i1 * p.bs[1] + i2 * p.bs[2];
        for (std::int64_t i3 = 0; i3 < p.od[3]; ++i3, ++o)
          f(o, ao + i3 * p.as[3], bo + i3 * p.bs[3]);
      }
}

enum class Bin { add, sub, mul, div };

template <typename S>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, Bin kind, const char* name) {
  BPlan plan = broadcast_plan(a.shape(), b.shape(), name);
  Graph<S>* g = resolve_graph<S>({&a, &b}, name);
  const bool rec = g && any_requires<S>({&a, &b});

  std::vector<S> out((std::size_t)plan.n);
  const S* pa = a.data();
  const S* pb = b.data();
  if (plan.same_shape) {
    switch (kind) {
      case Bin::add: for (std::int64_t i = 0; i < plan.n; ++i) out[(std::size_t)i] = pa[i] + pb[i]; break;
      case Bin::sub: for (std::int64_t i = 0; i < plan.n; ++i) out[(std::size_t)i] = pa[i] - pb[i]; break;
      case Bin::mul: for (std::int64_t i = 0; i < plan.n; ++i) out[(std::size_t)i] = pa[i] * pb[i]; break;
      case Bin::div: for (std::int64_t i = 0; i < plan.n; ++i) out[(std::size_t)i] = pa[i] / pb[i]; break;
    }
  } else {
    switch (kind) {
      case Bin::add: bcast_for_each(plan, [&](auto o, auto ao, auto bo) { out[(std::size_t)o] = pa[ao] + pb[bo]; }); break;
      case Bin::sub: bcast_for_each(plan, [&](auto o, auto ao, auto bo) { out[(std::size_t)o] = pa[ao] - pb[bo]; }); break;
      case Bin::mul: bcast_for_each(plan, [&](auto o, auto ao, auto bo) { out[(std::size_t)o] = pa[ao] * pb[bo]; }); break;
      case Bin::div: bcast_for_each(plan, [&](auto o, auto ao, auto bo) { out[(std::size_t)o] = pa[ao] / pb[bo]; }); break;
    }
  }

  Tensor<S> y = Tensor<S>::make(plan.out_shape, std::move(out), rec, g);
  check_finite(y, name);
  if (rec) {
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    auto yi = y.impl_ptr();
    const bool ar = a.requires_grad(), br = b.requires_grad();
    if (ar) ensure_impl_grad(ai.get());
    if (br) ensure_impl_grad(bi.get());
    ensure_impl_grad(yi.get());
    g->record([ai, bi, yi, plan, kind, ar, br]() {
      const S* gy = yi->grad.data();
      const S* pa = ai->data->data();
      const S* pb = bi->data->data();
      S* ga = ar ? ai->grad.data() : nullptr;
      S* gb = br ? bi->grad.data() : nullptr;
      if (plan.same_shape) {
        for (std::int64_t i = 0; i < plan.n; ++i) {
          const S go = gy[i];
          switch (kind) {
            case Bin::add:
              if (ar) ga[i] += go;
              if (br) gb[i] += go;
              break;
            case Bin::sub:
              if (ar) ga[i] += go;
              if (br) gb[i] -= go;
              break;
            case Bin::mul:
              if (ar) ga[i] += go * pb[i];
              if (br) gb[i] += go * pa[i];
              break;
            case Bin::div:
              if (ar) ga[i] += go / pb[i];
              if (br) gb[i] -= go * pa[i] / (pb[i] * pb[i]);
              break;
          }
        }
      } else {
        bcast_for_each(plan, [&](auto o, auto ao, auto bo) {
          const S go = gy[o];
          switch (kind) {
            case Bin::add:
              if (ar) ga[ao] += go;
              if (br) gb[bo] += go;
              break;
            case Bin::sub:
              if (ar) ga[ao] += go;
              if (br) gb[bo] -= go;
              break;
            case Bin::mul:
              if (ar) ga[ao] += go * pb[bo];
              if (br) gb[bo] += go * pa[ao];
              break;
            case Bin::div:
              if (ar) ga[ao] += go / pb[bo];
              if (br) gb[bo] -= go * pa[ao] / (pb[bo] * pb[bo]);
              break;
          }
        });
      }
    });
  }
  return y;
}

// Generic elementwise unary op; df(x, y) is the local derivative.
template <typename S, typename F, typename DF>
Tensor<S> unary_op(const Tensor<S>& x, const char* name, F f, DF df) {
  Graph<S>* g = resolve_graph<S>({&x}, name);
  const bool rec = g && x.requires_grad();
  const std::int64_t n = x.numel();
  std::vector<S> out((std::size_t)n);
  const S* px = x.data();
  for (std::int64_t i = 0; i < n; ++i) out[(std::size_t)i] = f(px[i]);
  Tensor<S> y = Tensor<S>::make(x.shape(), std::move(out), rec, g);
  check_finite(y, name);
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    ensure_impl_grad(xi.get());
    ensure_impl_grad(yi.get());
    g->record([xi, yi, df, n]() {
      const S* gy = yi->grad.data();
      const S* px = xi->data->data();
      const S* py = yi->data->data();
      S* gx = xi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * df(px[i], py[i]);
    });
  }
  return y;
}

}  // namespace detail

// ---- elementwise ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(a, b, detail::Bin::add, "add");
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(a, b, detail::Bin::sub, "sub");
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(a, b, detail::Bin::mul, "mul");
}
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(a, b, detail::Bin::div, "div");
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double c) {
  const S cs = (S)c;
  return detail::unary_op(
      x, "scale", [cs](S v) { return cs * v; }, [cs](S, S) { return cs; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, double c) {
  const S cs = (S)c;
  return detail::unary_op(
      x, "add_scalar", [cs](S v) { return v + cs; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_op(
      x, "relu", [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  // exact erf form; derivative is Phi(x) + x*phi(x)
  return detail::unary_op(
      x, "gelu",
      [](S v) {
        const double xv = (double)v;
        return (S)(0.5 * xv * (1.0 + std::erf(xv * 0.7071067811865475)));
      },
      [](S v, S) {
        const double xv = (double)v;
        const double cdf = 0.5 * (1.0 + std::erf(xv * 0.7071067811865475));
        const double pdf = std::exp(-0.5 * xv * xv) * 0.3989422804014327;
        return (S)(cdf + xv * pdf);
      });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  // stable: max(x,0) + log1p(exp(-|x|)); derivative is the sigmoid
  return detail::unary_op(
      x, "softplus",
      [](S v) {
        const double xv = (double)v;
        return (S)(std::max(xv, 0.0) + std::log1p(std::exp(-std::abs(xv))));
      },
      [](S v, S) {
        const double xv = (double)v;
        if (xv >= 0.0) return (S)(1.0 / (1.0 + std::exp(-xv)));
        const double e = std::exp(xv);
        return (S)(e / (1.0 + e));
      });
}

template <typename S>
Tensor<S> exp_(const Tensor<S>& x) {
  return detail::unary_op(
      x, "exp", [](S v) { return (S)std::exp((double)v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log_(const Tensor<S>& x) {
  return detail::unary_op(
      x, "log", [](S v) { return (S)std::log((double)v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> sqrt_(const Tensor<S>& x) {
  return detail::unary_op(
      x, "sqrt", [](S v) { return (S)std::sqrt((double)v); },
      [](S, S y) { return S(0.5) / y; });
}

// ---- matrix products ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw shape_error("matmul: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Graph<S>* g = detail::resolve_graph<S>({&a, &b}, "matmul");
  const bool rec = g && detail::any_requires<S>({&a, &b});
  std::vector<S> out((std::size_t)m * n, S(0));
  {
    const S* pa = a.data();
    const S* pb = b.data();
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const S s = pa[i * k + p];
        const S* brow = pb + (std::size_t)p * n;
        S* orow = out.data() + (std::size_t)i * n;
        for (int j = 0; j < n; ++j) orow[j] += s * brow[j];
      }
  }
  Tensor<S> y = Tensor<S>::make({m, n}, std::move(out), rec, g);
  detail::check_finite(y, "matmul");
  if (rec) {
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    auto yi = y.impl_ptr();
    const bool ar = a.requires_grad(), br = b.requires_grad();
    if (ar) detail::ensure_impl_grad(ai.get());
    if (br) detail::ensure_impl_grad(bi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([ai, bi, yi, m, k, n, ar, br]() {
      const S* gy = yi->grad.data();
      const S* pa = ai->data->data();
      const S* pb = bi->data->data();
      if (ar) {
        S* ga = ai->grad.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const S* gyrow = gy + (std::size_t)i * n;
            const S* brow = pb + (std::size_t)p * n;
            S acc = S(0);
            for (int j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
            ga[i * k + p] += acc;
          }
      }
      if (br) {
        S* gb = bi->grad.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const S s = pa[i * k + p];
            const S* gyrow = gy + (std::size_t)i * n;
            S* gbrow = gb + (std::size_t)p * n;
            for (int j = 0; j < n; ++j) gbrow[j] += s * gyrow[j];
          }
      }
    });
  }
  return y;
}

// a @ b^T without materializing the transpose; both operands row-major with
// the contraction over their last dimension. Used for scoring and attention.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw shape_error("matmul_nt: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Graph<S>* g = detail::resolve_graph<S>({&a, &b}, "matmul_nt");
  const bool rec = g && detail::any_requires<S>({&a, &b});
  std::vector<S> out((std::size_t)m * n);
  {
    const S* pa = a.data();
    const S* pb = b.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const S* arow = pa + (std::size_t)i * k;
        const S* brow = pb + (std::size_t)j * k;
        S acc = S(0);
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        out[(std::size_t)i * n + j] = acc;
      }
  }
  Tensor<S> y = Tensor<S>::make({m, n}, std::move(out), rec, g);
  detail::check_finite(y, "matmul_nt");
  if (rec) {
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    auto yi = y.impl_ptr();
    const bool ar = a.requires_grad(), br = b.requires_grad();
    if (ar) detail::ensure_impl_grad(ai.get());
    if (br) detail::ensure_impl_grad(bi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([ai, bi, yi, m, k, n, ar, br]() {
      const S* gy = yi->grad.data();
      const S* pa = ai->data->data();
      const S* pb = bi->data->data();
      if (ar) {
        S* ga = ai->grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const S go = gy[(std::size_t)i * n + j];
            const S* brow = pb + (std::size_t)j * k;
            S* garow = ga + (std::size_t)i * k;
            for (int p = 0; p < k; ++p) garow[p] += go * brow[p];
          }
      }
      if (br) {
        S* gb = bi->grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const S go = gy[(std::size_t)i * n + j];
            const S* arow = pa + (std::size_t)i * k;
            S* gbrow = gb + (std::size_t)j * k;
            for (int p = 0; p < k; ++p) gbrow[p] += go * arow[p];
          }
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw shape_error("transpose: want rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Graph<S>* g = detail::resolve_graph<S>({&x}, "transpose");
  const bool rec = g && x.requires_grad();
  std::vector<S> out((std::size_t)m * n);
  const S* px = x.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[(std::size_t)j * m + i] = px[(std::size_t)i * n + j];
  Tensor<S> y = Tensor<S>::make({n, m}, std::move(out), rec, g);
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(xi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([xi, yi, m, n]() {
      const S* gy = yi->grad.data();
      S* gx = xi->grad.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[(std::size_t)i * n + j] += gy[(std::size_t)j * m + i];
    });
  }
  return y;
}

// ---- convolution / resampling (channels-first: x is (C, L)) ----

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride,
                 int pad) {
  if (x.rank() != 2 || w.rank() != 3 || w.dim(1) != x.dim(0))
    throw shape_error("conv1d: input " + shape_str(x.shape()) + " weight " +
                      shape_str(w.shape()));
  if (bias.defined() && bias.numel() != w.dim(0))
    throw shape_error("conv1d: bias length " + std::to_string(bias.numel()) + " for " +
                      std::to_string(w.dim(0)) + " output channels");
  if (stride < 1) throw shape_error("conv1d: stride must be >= 1");
  const int cin = x.dim(0), len = x.dim(1);
  const int cout = w.dim(0), kw = w.dim(2);
  const int lout = (len + 2 * pad - kw) / stride + 1;
  if (lout < 1)
    throw shape_error("conv1d: output length would be " + std::to_string(lout) + " for input " +
                      shape_str(x.shape()));

  Graph<S>* g = detail::resolve_graph<S>({&x, &w, &bias}, "conv1d");
  const bool rec = g && detail::any_requires<S>({&x, &w, &bias});

  // valid output range for a given kernel tap: l*stride + k - pad in [0, len)
  auto lrange = [len, lout, stride, pad](int k, int& lo, int& hi) {
    int jmin = pad - k;  // smallest l*stride
    lo = jmin <= 0 ? 0 : (jmin + stride - 1) / stride;
    int jmax = len - 1 + pad - k;
    hi = jmax < 0 ? -1 : std::min(lout - 1, jmax / stride);
  };

  std::vector<S> out((std::size_t)cout * lout, S(0));
  {
    const S* px = x.data();
    const S* pw = w.data();
    for (int co = 0; co < cout; ++co) {
      S* orow = out.data() + (std::size_t)co * lout;
      if (bias.defined()) {
        const S bv = bias.data()[co];
        for (int l = 0; l < lout; ++l) orow[l] = bv;
      }
      for (int ci = 0; ci < cin; ++ci) {
        const S* xrow = px + (std::size_t)ci * len;
        for (int k = 0; k < kw; ++k) {
          const S wv = pw[((std::size_t)co * cin + ci) * kw + k];
          int lo, hi;
          lrange(k, lo, hi);
          for (int l = lo; l <= hi; ++l) orow[l] += wv * xrow[l * stride + k - pad];
        }
      }
    }
  }
  Tensor<S> y = Tensor<S>::make({cout, lout}, std::move(out), rec, g);
  detail::check_finite(y, "conv1d");
  if (rec) {
    auto xi = x.impl_ptr();
    auto wi = w.impl_ptr();
    auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
    auto yi = y.impl_ptr();
    const bool xr = x.requires_grad(), wr = w.requires_grad();
    const bool br = bias.defined() && bias.requires_grad();
    if (xr) detail::ensure_impl_grad(xi.get());
    if (wr) detail::ensure_impl_grad(wi.get());
    if (br) detail::ensure_impl_grad(bi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([xi, wi, bi, yi, cin, len, cout, kw, lout, stride, pad, lrange, xr, wr, br]() {
      const S* gy = yi->grad.data();
      const S* px = xi->data->data();
      const S* pw = wi->data->data();
      if (br) {
        S* gb = bi->grad.data();
        for (int co = 0; co < cout; ++co) {
          const S* gyrow = gy + (std::size_t)co * lout;
          S acc = S(0);
          for (int l = 0; l < lout; ++l) acc += gyrow[l];
          gb[co] += acc;
        }
      }
      for (int co = 0; co < cout; ++co) {
        const S* gyrow = gy + (std::size_t)co * lout;
        for (int ci = 0; ci < cin; ++ci) {
          const S* xrow = px + (std::size_t)ci * len;
          S* gxrow = xr ? xi->grad.data() + (std::size_t)ci * len : nullptr;
          for (int k = 0; k < kw; ++k) {
            int lo, hi;
            lrange(k, lo, hi);
            if (wr) {
              S acc = S(0);
              for (int l = lo; l <= hi; ++l) acc += gyrow[l] * xrow[l * stride + k - pad];
              wi->grad[((std::size_t)co * cin + ci) * kw + k] += acc;
            }
            if (xr) {
              const S wv = pw[((std::size_t)co * cin + ci) * kw + k];
              for (int l = lo; l <= hi; ++l) gxrow[l * stride + k - pad] += wv * gyrow[l];
            }
          }
        }
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  return conv1d(x, w, Tensor<S>{}, stride, pad);
}

// Linear interpolation along the length axis of a (C, L) tensor, half-pixel
// aligned (matches align_corners=false resampling).
template <typename S>
Tensor<S> upsample_linear(const Tensor<S>& x, int lout) {
  if (x.rank() != 2) throw shape_error("upsample_linear: want rank 2, got " + shape_str(x.shape()));
  if (lout < 1) throw shape_error("upsample_linear: target length must be >= 1");
  const int c = x.dim(0), len = x.dim(1);
  const double scl = (double)len / (double)lout;
  std::vector<int> i0((std::size_t)lout), i1((std::size_t)lout);
  std::vector<S> fr((std::size_t)lout);
  for (int l = 0; l < lout; ++l) {
    double pos = ((double)l + 0.5) * scl - 0.5;
    pos = std::min(std::max(pos, 0.0), (double)(len - 1));
    const int lo = (int)pos;
    i0[(std::size_t)l] = lo;
    i1[(std::size_t)l] = std::min(lo + 1, len - 1);
    fr[(std::size_t)l] = (S)(pos - lo);
  }
  Graph<S>* g = detail::resolve_graph<S>({&x}, "upsample_linear");
  const bool rec = g && x.requires_grad();
  std::vector<S> out((std::size_t)c * lout);
  const S* px = x.data();
  for (int ci = 0; ci < c; ++ci) {
    const S* xrow = px + (std::size_t)ci * len;
    S* orow = out.data() + (std::size_t)ci * lout;
    for (int l = 0; l < lout; ++l) {
      const S f = fr[(std::size_t)l];
      orow[l] = (S(1) - f) * xrow[i0[(std::size_t)l]] + f * xrow[i1[(std::size_t)l]];
    }
  }
  Tensor<S> y = Tensor<S>::make({c, lout}, std::move(out), rec, g);
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(xi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([xi, yi, c, len, lout, i0, i1, fr]() {
      const S* gy = yi->grad.data();
      S* gx = xi->grad.data();
      for (int ci = 0; ci < c; ++ci) {
        const S* gyrow = gy + (std::size_t)ci * lout;
        S* gxrow = gx + (std::size_t)ci * len;
        for (int l = 0; l < lout; ++l) {
          const S f = fr[(std::size_t)l];
          gxrow[i0[(std::size_t)l]] += (S(1) - f) * gyrow[l];
          gxrow[i1[(std::size_t)l]] += f * gyrow[l];
        }
      }
    });
  }
  return y;
}

// ---- shape surgery ----

namespace detail {

inline void axis_extents(const Shape& s, int axis, std::int64_t& outer, std::int64_t& n,
                         std::int64_t& inner, const char* op) {
  if (axis < 0 || axis >= (int)s.size())
    throw shape_error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                      shape_str(s));
  outer = 1;
  inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s[(std::size_t)k];
  n = s[(std::size_t)axis];
  for (int k = axis + 1; k < (int)s.size(); ++k) inner *= s[(std::size_t)k];
}

}  // namespace detail

template <typename S>
Tensor<S> concat(int axis, const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw shape_error("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  std::int64_t outer, n0, inner;
  detail::axis_extents(s0, axis, outer, n0, inner, "concat");
  std::int64_t ntot = 0;
  for (const auto& x : xs) {
    if (x.rank() != (int)s0.size())
      throw shape_error("concat: rank mismatch " + shape_str(x.shape()) + " vs " + shape_str(s0));
    for (int k = 0; k < (int)s0.size(); ++k)
      if (k != axis && x.dim(k) != s0[(std::size_t)k])
        throw shape_error("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                          shape_str(s0) + " on axis " + std::to_string(k));
    ntot += x.dim(axis);
  }
  Shape os = s0;
  os[(std::size_t)axis] = (int)ntot;

  Graph<S>* g = nullptr;
  bool rec = false;
  for (const auto& x : xs) {
    Graph<S>* xg = detail::resolve_graph<S>({&x}, "concat");
    if (xg) {
      if (g && g != xg) throw graph_error("concat: inputs recorded on different graphs");
      g = xg;
    }
    rec = rec || x.requires_grad();
  }
  rec = rec && g != nullptr;

  std::vector<S> out((std::size_t)(outer * ntot * inner));
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const std::int64_t nx = x.dim(axis);
    const S* px = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * ntot + off) * inner, px + o * nx * inner,
                  (std::size_t)(nx * inner) * sizeof(S));
    off += nx;
  }
  Tensor<S> y = Tensor<S>::make(os, std::move(out), rec, g);
  if (rec) {
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(yi.get());
    struct Part {
      std::shared_ptr<TensorImpl<S>> impl;
      std::int64_t off, n;
      bool rg;
    };
    std::vector<Part> parts;
    std::int64_t poff = 0;
    for (const auto& x : xs) {
      if (x.requires_grad()) detail::ensure_impl_grad(x.impl());
      parts.push_back({x.impl_ptr(), poff, (std::int64_t)x.dim(axis), x.requires_grad()});
      poff += x.dim(axis);
    }
    g->record([yi, parts, outer, ntot, inner]() {
      const S* gy = yi->grad.data();
      for (const auto& p : parts) {
        if (!p.rg) continue;
        S* gx = p.impl->grad.data();
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* src = gy + (o * ntot + p.off) * inner;
          S* dst = gx + o * p.n * inner;
          for (std::int64_t i = 0; i < p.n * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len) {
  std::int64_t outer, n, inner;
  detail::axis_extents(x.shape(), axis, outer, n, inner, "slice");
  if (start < 0 || len < 1 || start + len > n)
    throw shape_error("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                      ") out of range for axis " + std::to_string(axis) + " of " +
                      shape_str(x.shape()));
  Shape os = x.shape();
  os[(std::size_t)axis] = len;
  Graph<S>* g = detail::resolve_graph<S>({&x}, "slice");
  const bool rec = g && x.requires_grad();
  std::vector<S> out((std::size_t)(outer * len * inner));
  const S* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, px + (o * n + start) * inner,
                (std::size_t)(len * inner) * sizeof(S));
  Tensor<S> y = Tensor<S>::make(os, std::move(out), rec, g);
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(xi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([xi, yi, outer, n, inner, start, len]() {
      const S* gy = yi->grad.data();
      S* gx = xi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        const S* src = gy + o * len * inner;
        S* dst = gx + (o * n + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

// ---- reductions ----

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Graph<S>* g = detail::resolve_graph<S>({&x}, "sum_all");
  const bool rec = g && x.requires_grad();
  S acc = S(0);
  for (S v : x.values()) acc += v;
  Tensor<S> y = Tensor<S>::make({1}, {acc}, rec, g);
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(xi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([xi, yi]() {
      const S go = yi->grad[0];
      for (S& v : xi->grad) v += go;
    });
  }
  return y;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scale(sum_all(x), 1.0 / (double)x.numel());
}

namespace detail {

template <typename S>
Tensor<S> reduce_axis(const Tensor<S>& x, int axis, bool keepdim, bool mean, const char* name) {
  std::int64_t outer, n, inner;
  axis_extents(x.shape(), axis, outer, n, inner, name);
  Shape os;
  if (keepdim) {
    os = x.shape();
    os[(std::size_t)axis] = 1;
  } else if (x.rank() == 1) {
    os = {1};
  } else {
    for (int k = 0; k < x.rank(); ++k)
      if (k != axis) os.push_back(x.dim(k));
  }
  const S inv = mean ? (S)(1.0 / (double)n) : S(1);
  Graph<S>* g = resolve_graph<S>({&x}, name);
  const bool rec = g && x.requires_grad();
  std::vector<S> out((std::size_t)(outer * inner), S(0));
  const S* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < n; ++i) {
      const S* row = px + (o * n + i) * inner;
      S* orow = out.data() + o * inner;
      for (std::int64_t j = 0; j < inner; ++j) orow[j] += row[j];
    }
  if (mean)
    for (S& v : out) v *= inv;
  Tensor<S> y = Tensor<S>::make(os, std::move(out), rec, g);
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    ensure_impl_grad(xi.get());
    ensure_impl_grad(yi.get());
    g->record([xi, yi, outer, n, inner, inv]() {
      const S* gy = yi->grad.data();
      S* gx = xi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < n; ++i) {
          const S* gyrow = gy + o * inner;
          S* gxrow = gx + (o * n + i) * inner;
          for (std::int64_t j = 0; j < inner; ++j) gxrow[j] += gyrow[j] * inv;
        }
    });
  }
  return y;
}

}  // namespace detail

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim = false) {
  return detail::reduce_axis(x, axis, keepdim, false, "sum");
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis, bool keepdim = false) {
  return detail::reduce_axis(x, axis, keepdim, true, "mean");
}

// ---- softmax ----

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  std::int64_t outer, n, inner;
  detail::axis_extents(x.shape(), axis, outer, n, inner, "softmax");
  Graph<S>* g = detail::resolve_graph<S>({&x}, "softmax");
  const bool rec = g && x.requires_grad();
  std::vector<S> out((std::size_t)x.numel());
  const S* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < inner; ++j) {
      const std::int64_t base = o * n * inner + j;
      S mx = px[base];
      for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      S z = S(0);
      for (std::int64_t i = 0; i < n; ++i) {
        const S e = (S)std::exp((double)(px[base + i * inner] - mx));
        out[(std::size_t)(base + i * inner)] = e;
        z += e;
      }
      const S invz = S(1) / z;
      for (std::int64_t i = 0; i < n; ++i) out[(std::size_t)(base + i * inner)] *= invz;
    }
  Tensor<S> y = Tensor<S>::make(x.shape(), std::move(out), rec, g);
  detail::check_finite(y, "softmax");
  if (rec) {
    auto xi = x.impl_ptr();
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(xi.get());
    detail::ensure_impl_grad(yi.get());
    g->record([xi, yi, outer, n, inner]() {
      const S* gy = yi->grad.data();
      const S* py = yi->data->data();
      S* gx = xi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t j = 0; j < inner; ++j) {
          const std::int64_t base = o * n * inner + j;
          S dot = S(0);
          for (std::int64_t i = 0; i < n; ++i)
            dot += gy[base + i * inner] * py[base + i * inner];
          for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t k = base + i * inner;
            gx[k] += py[k] * (gy[k] - dot);
          }
        }
    });
  }
  return y;
}

// ---- embedding lookup ----

// Gathers rows of a (V, d) table. With freeze_row0 (the default, matching the
// item table whose row 0 is the padding id) gradients never reach row 0, so
// it stays exactly as initialized. Tables without a padding row pass false.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<std::int32_t>& ids,
                           bool freeze_row0 = true) {
  if (table.rank() != 2)
    throw shape_error("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  const int v = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids)
    if (id < 0 || id >= v)
      throw shape_error("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                        std::to_string(v) + " rows");
  const int m = (int)ids.size();
  Graph<S>* g = detail::resolve_graph<S>({&table}, "embedding_lookup");
  const bool rec = g && table.requires_grad();
  std::vector<S> out((std::size_t)m * d);
  const S* pt = table.data();
  for (int i = 0; i < m; ++i)
    std::memcpy(out.data() + (std::size_t)i * d, pt + (std::size_t)ids[(std::size_t)i] * d,
                (std::size_t)d * sizeof(S));
  Tensor<S> y = Tensor<S>::make({m, d}, std::move(out), rec, g);
  if (rec) {
    auto ti = table.impl_ptr();
    auto yi = y.impl_ptr();
    detail::ensure_impl_grad(ti.get());
    detail::ensure_impl_grad(yi.get());
    g->record([ti, yi, ids, d, m, freeze_row0]() {
      const S* gy = yi->grad.data();
      S* gt = ti->grad.data();
      for (int i = 0; i < m; ++i) {
        const std::int32_t id = ids[(std::size_t)i];
        if (id == 0 && freeze_row0) continue;  // padding row stays put
        const S* src = gy + (std::size_t)i * d;
        S* dst = gt + (std::size_t)id * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

// ---- composites ----

// Standard layer norm over the last axis of (m, d), with learned gain/bias of
// shape (d). Built from primitives so it inherits their gradients.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps = 1e-5) {
  if (x.rank() != 2) throw shape_error("layer_norm: want rank 2, got " + shape_str(x.shape()));
  Tensor<S> mu = mean(x, 1, true);
  Tensor<S> xc = sub(x, mu);
  Tensor<S> var = mean(mul(xc, xc), 1, true);
  Tensor<S> denom = sqrt_(add_scalar(var, eps));
  Tensor<S> xn = div(xc, denom);
  return add(mul(xn, gain), bias);
}

}  // namespace t2diff
