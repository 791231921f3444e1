#pragma once

// Dense primitives for the ViT blocks: matmul, softmax, layer norm, GELU,
// conv2d and token-grid max pooling, each paired with an analytic backward
// pass. Everything is a pure function over immutable inputs; the only shared
// state is the per-thread MAC counter and the process-wide thread count.
//
// Summation order is fixed: every reduction accumulates in ascending index
// order, so results are bitwise reproducible and match the naive loop nests.

#include <cmath>
#include <cstdint>
#include <thread>

#include "turbovit/tensor.hpp"

namespace turbovit::ops {

// ---------------------------------------------------------------------------
// MAC instrumentation. A scope installs a per-thread sink; matmul and conv2d
// report one MAC per multiply-accumulate while a sink is active. Elementwise
// ops, softmax, layer norm and pooling report nothing, matching the counting
// convention of the complexity module.
// ---------------------------------------------------------------------------

namespace detail {
inline thread_local int64_t* mac_sink = nullptr;
}

inline void add_macs(int64_t n) {
  if (detail::mac_sink) *detail::mac_sink += n;
}

class MacCountScope {
public:
  MacCountScope() : prev_(detail::mac_sink) { detail::mac_sink = &count_; }
  ~MacCountScope() { detail::mac_sink = prev_; }
  MacCountScope(const MacCountScope&) = delete;
  MacCountScope& operator=(const MacCountScope&) = delete;

  int64_t count() const { return count_; }

private:
  int64_t count_ = 0;
  int64_t* prev_;
};

// ---------------------------------------------------------------------------
// Thread control. Row-parallel matmul assigns whole output rows to threads;
// each row's reduction order is unchanged, so results are bitwise identical
// to the single-threaded mode for any thread count.
// ---------------------------------------------------------------------------

namespace detail {
inline int num_threads = 1;
}

inline void set_num_threads(int n) { detail::num_threads = n < 1 ? 1 : n; }
inline int num_threads() { return detail::num_threads; }

template <class Fn>
void parallel_rows(int64_t rows, int64_t work_per_row, Fn&& fn) {
  const int want = detail::num_threads;
  if (want <= 1 || rows < 2 || rows * work_per_row < (1 << 16)) {
    fn(0, rows);
    return;
  }
  const int nt = static_cast<int>(std::min<int64_t>(want, rows));
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(nt));
  const int64_t chunk = (rows + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    const int64_t lo = t * chunk;
    const int64_t hi = std::min<int64_t>(rows, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& w : workers) w.join();
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// c[m x n] = a[m x k] * b[k x n]. The k-loop is outermost inside each row so
// each c[i][j] accumulates in ascending-k order (bitwise equal to the naive
// triple loop), while the j-inner loop vectorizes.
template <class S>
void matmul_raw(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  add_macs(m * k * n);
  parallel_rows(m, k * n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      S* ci = c + i * n;
      for (int64_t j = 0; j < n; ++j) ci[j] = S(0);
      const S* ai = a + i * k;
      for (int64_t t = 0; t < k; ++t) {
        const S av = ai[t];
        const S* bt = b + t * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bt[j];
      }
    }
  });
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.size(1) != b.size(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  Tensor<S> c({a.size(0), b.size(1)});
  matmul_raw(a.ptr(), b.ptr(), c.ptr(), a.size(0), a.size(1), b.size(1));
  return c;
}

// da = dc * b^T, db = a^T * dc.
template <class S>
void matmul_backward(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& dc,
                     Tensor<S>& da, Tensor<S>& db) {
  const int64_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (dc.size(0) != m || dc.size(1) != n)
    throw ShapeError("matmul_backward: grad shape " + shape_str(dc.shape) +
                     " does not match output [" + std::to_string(m) + "x" + std::to_string(n) + "]");
  da = Tensor<S>({static_cast<int>(m), static_cast<int>(k)});
  db = Tensor<S>({static_cast<int>(k), static_cast<int>(n)});
  parallel_rows(m, k * n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const S* dci = dc.ptr() + i * n;
      S* dai = da.ptr() + i * k;
      for (int64_t t = 0; t < k; ++t) {
        const S* bt = b.ptr() + t * n;
        S acc = S(0);
        for (int64_t j = 0; j < n; ++j) acc += dci[j] * bt[j];
        dai[t] = acc;
      }
    }
  });
  // db accumulates over rows of a; kept single-threaded for determinism.
  for (int64_t i = 0; i < m; ++i) {
    const S* ai = a.ptr() + i * k;
    const S* dci = dc.ptr() + i * n;
    for (int64_t t = 0; t < k; ++t) {
      const S av = ai[t];
      S* dbt = db.ptr() + t * n;
      for (int64_t j = 0; j < n; ++j) dbt[j] += av * dci[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Linear over the last dimension: y[..., out] = x[..., in] * w[in, out] + b.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.ndim() < 1 || x.shape.back() != w.size(0))
    throw ShapeError("linear: input " + shape_str(x.shape) + " vs weight " + shape_str(w.shape));
  const int64_t rows = x.numel() / x.shape.back();
  const int in = w.size(0), out = w.size(1);
  Shape out_shape = x.shape;
  out_shape.back() = out;
  Tensor<S> y(out_shape);
  matmul_raw(x.ptr(), w.ptr(), y.ptr(), rows, in, out);
  if (!b.empty()) {
    if (b.numel() != out)
      throw ShapeError("linear: bias " + shape_str(b.shape) + " vs out dim " + std::to_string(out));
    for (int64_t r = 0; r < rows; ++r) {
      S* yr = y.ptr() + r * out;
      for (int j = 0; j < out; ++j) yr[j] += b(j);
    }
  }
  return y;
}

template <class S>
void linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy,
                     Tensor<S>& dx, Tensor<S>& dw, Tensor<S>& db) {
  const int64_t rows = x.numel() / x.shape.back();
  const int in = w.size(0), out = w.size(1);
  Tensor<S> x2 = x.reshaped({static_cast<int>(rows), in});
  Tensor<S> dy2 = dy.reshaped({static_cast<int>(rows), out});
  Tensor<S> dx2, dw2;
  matmul_backward(x2, w, dy2, dx2, dw2);
  dx = dx2.reshaped(x.shape);
  dw = std::move(dw2);
  db = Tensor<S>({out});
  for (int64_t r = 0; r < rows; ++r) {
    const S* dyr = dy2.ptr() + r * out;
    for (int j = 0; j < out; ++j) db(j) += dyr[j];
  }
}

// ---------------------------------------------------------------------------
// softmax over the last dimension, stabilized by max subtraction
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
  if (x.ndim() < 1 || x.shape.back() < 1)
    throw ShapeError("softmax_lastdim: needs a non-empty last dimension, got " +
                     shape_str(x.shape));
  const int d = x.shape.back();
  const int64_t rows = x.numel() / d;
  Tensor<S> y(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const S* xr = x.ptr() + r * d;
    S* yr = y.ptr() + r * d;
    S mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    S sum = S(0);
    for (int j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const S inv = S(1) / sum;
    for (int j = 0; j < d; ++j) yr[j] *= inv;
  }
  return y;
}

// dx = y * (dy - sum(dy * y)) per row; takes the forward output, not the input.
template <class S>
Tensor<S> softmax_lastdim_backward(const Tensor<S>& y, const Tensor<S>& dy) {
  const int d = y.shape.back();
  const int64_t rows = y.numel() / d;
  Tensor<S> dx(y.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const S* yr = y.ptr() + r * d;
    const S* dyr = dy.ptr() + r * d;
    S* dxr = dx.ptr() + r * d;
    S dot = S(0);
    for (int j = 0; j < d; ++j) dot += dyr[j] * yr[j];
    for (int j = 0; j < d; ++j) dxr[j] = yr[j] * (dyr[j] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// layer norm over the last dimension with affine gamma/beta
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps) {
  const int d = x.shape.back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape) + "/" +
                     shape_str(beta.shape) + " vs last dim " + std::to_string(d));
  const int64_t rows = x.numel() / d;
  Tensor<S> y(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const S* xr = x.ptr() + r * d;
    S* yr = y.ptr() + r * d;
    S mean = S(0);
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= S(d);
    const S rstd = S(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * gamma(j) + beta(j);
  }
  return y;
}

template <class S>
void layer_norm_backward(const Tensor<S>& x, const Tensor<S>& gamma, S eps,
                         const Tensor<S>& dy, Tensor<S>& dx, Tensor<S>& dgamma,
                         Tensor<S>& dbeta) {
  const int d = x.shape.back();
  const int64_t rows = x.numel() / d;
  dx = Tensor<S>(x.shape);
  dgamma = Tensor<S>({d});
  dbeta = Tensor<S>({d});
  std::vector<S> xhat(static_cast<size_t>(d));
  for (int64_t r = 0; r < rows; ++r) {
    const S* xr = x.ptr() + r * d;
    const S* dyr = dy.ptr() + r * d;
    S* dxr = dx.ptr() + r * d;
    S mean = S(0);
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= S(d);
    const S rstd = S(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (xr[j] - mean) * rstd;

    S sum_g = S(0), sum_gx = S(0);
    for (int j = 0; j < d; ++j) {
      const S g = dyr[j] * gamma(j);
      sum_g += g;
      sum_gx += g * xhat[static_cast<size_t>(j)];
      dgamma(j) += dyr[j] * xhat[static_cast<size_t>(j)];
      dbeta(j) += dyr[j];
    }
    const S inv_d = S(1) / S(d);
    for (int j = 0; j < d; ++j) {
      const S g = dyr[j] * gamma(j);
      dxr[j] = rstd * (g - inv_d * sum_g - xhat[static_cast<size_t>(j)] * inv_d * sum_gx);
    }
  }
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation
// ---------------------------------------------------------------------------

namespace detail {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  Tensor<S> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const S v = x.data[static_cast<size_t>(i)];
    const S t = std::tanh(static_cast<S>(detail::kGeluC) * (v + static_cast<S>(detail::kGeluA) * v * v * v));
    y.data[static_cast<size_t>(i)] = S(0.5) * v * (S(1) + t);
  }
  return y;
}

template <class S>
Tensor<S> gelu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
  Tensor<S> dx(x.shape);
  const S c = static_cast<S>(detail::kGeluC);
  const S a = static_cast<S>(detail::kGeluA);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const S v = x.data[static_cast<size_t>(i)];
    const S u = c * (v + a * v * v * v);
    const S t = std::tanh(u);
    const S du = c * (S(1) + S(3) * a * v * v);
    const S grad = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
    dx.data[static_cast<size_t>(i)] = dy.data[static_cast<size_t>(i)] * grad;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with bias, NCHW input, OIHW weight
// ---------------------------------------------------------------------------

inline int conv_out_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride,
                 int padding) {
  if (x.ndim() != 4 || w.ndim() != 4 || x.size(1) != w.size(1))
    throw ShapeError("conv2d: input " + shape_str(x.shape) + " vs weight " + shape_str(w.shape));
  const int B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int O = w.size(0), kh = w.size(2), kw = w.size(3);
  const int Ho = conv_out_size(H, kh, stride, padding);
  const int Wo = conv_out_size(W, kw, stride, padding);
  if (Ho < 1 || Wo < 1)
    throw ConfigError("conv2d: non-positive output size for input " + std::to_string(H) + "x" +
                      std::to_string(W) + ", kernel " + std::to_string(kh) + "x" +
                      std::to_string(kw) + ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding));
  add_macs(static_cast<int64_t>(B) * O * Ho * Wo * C * kh * kw);
  Tensor<S> y({B, O, Ho, Wo});
  parallel_rows(static_cast<int64_t>(B) * O, static_cast<int64_t>(Ho) * Wo * C * kh * kw,
                [&](int64_t lo, int64_t hi) {
    for (int64_t bo = lo; bo < hi; ++bo) {
      const int bi = static_cast<int>(bo / O);
      const int o = static_cast<int>(bo % O);
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          S acc = b.empty() ? S(0) : b(o);
          for (int c = 0; c < C; ++c) {
            const S* xc = x.ptr() + ((static_cast<int64_t>(bi) * C + c) * H) * W;
            const S* wc = w.ptr() + ((static_cast<int64_t>(o) * C + c) * kh) * kw;
            for (int i = 0; i < kh; ++i) {
              const int ih = oh * stride - padding + i;
              if (ih < 0 || ih >= H) continue;
              for (int j = 0; j < kw; ++j) {
                const int iw = ow * stride - padding + j;
                if (iw < 0 || iw >= W) continue;
                acc += xc[static_cast<int64_t>(ih) * W + iw] * wc[static_cast<int64_t>(i) * kw + j];
              }
            }
          }
          y(bi, o, oh, ow) = acc;
        }
      }
    }
  });
  return y;
}

template <class S>
void conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, int stride, int padding,
                     const Tensor<S>& dy, Tensor<S>& dx, Tensor<S>& dw, Tensor<S>& db) {
  const int B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int O = w.size(0), kh = w.size(2), kw = w.size(3);
  const int Ho = dy.size(2), Wo = dy.size(3);
  dx = Tensor<S>(x.shape);
  dw = Tensor<S>(w.shape);
  db = Tensor<S>({O});
  for (int bi = 0; bi < B; ++bi) {
    for (int o = 0; o < O; ++o) {
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          const S g = dy(bi, o, oh, ow);
          db(o) += g;
          for (int c = 0; c < C; ++c) {
            S* dxc = dx.ptr() + ((static_cast<int64_t>(bi) * C + c) * H) * W;
            const S* xc = x.ptr() + ((static_cast<int64_t>(bi) * C + c) * H) * W;
            S* dwc = dw.ptr() + ((static_cast<int64_t>(o) * C + c) * kh) * kw;
            const S* wc = w.ptr() + ((static_cast<int64_t>(o) * C + c) * kh) * kw;
            for (int i = 0; i < kh; ++i) {
              const int ih = oh * stride - padding + i;
              if (ih < 0 || ih >= H) continue;
              for (int j = 0; j < kw; ++j) {
                const int iw = ow * stride - padding + j;
                if (iw < 0 || iw >= W) continue;
                dwc[static_cast<int64_t>(i) * kw + j] += g * xc[static_cast<int64_t>(ih) * W + iw];
                dxc[static_cast<int64_t>(ih) * W + iw] += g * wc[static_cast<int64_t>(i) * kw + j];
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// max pooling over a [B, H, W, d] token grid, per channel
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> max_pool_tokens(const Tensor<S>& x, int ph, int pw) {
  if (x.ndim() != 4) throw ShapeError("max_pool_tokens: expected [B,H,W,d], got " + shape_str(x.shape));
  const int B = x.size(0), H = x.size(1), W = x.size(2), d = x.size(3);
  if (ph < 1 || pw < 1 || H % ph != 0 || W % pw != 0)
    throw ConfigError("max_pool_tokens: grid " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible by pool " + std::to_string(ph) + "x" + std::to_string(pw));
  const int Ho = H / ph, Wo = W / pw;
  Tensor<S> y({B, Ho, Wo, d});
  for (int b = 0; b < B; ++b) {
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        S* yr = y.ptr() + ((static_cast<int64_t>(b) * Ho + oh) * Wo + ow) * d;
        for (int i = 0; i < ph; ++i) {
          const S* xr = x.ptr() + ((static_cast<int64_t>(b) * H + oh * ph + i) * W + ow * pw) * d;
          for (int j = 0; j < pw; ++j) {
            const S* xv = xr + static_cast<int64_t>(j) * d;
            if (i == 0 && j == 0) {
              for (int c = 0; c < d; ++c) yr[c] = xv[c];
            } else {
              for (int c = 0; c < d; ++c) yr[c] = std::max(yr[c], xv[c]);
            }
          }
        }
      }
    }
  }
  return y;
}

// Routes each output gradient to the first-scanned maximum of its window.
template <class S>
Tensor<S> max_pool_tokens_backward(const Tensor<S>& x, int ph, int pw, const Tensor<S>& dy) {
  const int B = x.size(0), H = x.size(1), W = x.size(2), d = x.size(3);
  const int Ho = H / ph, Wo = W / pw;
  Tensor<S> dx(x.shape);
  for (int b = 0; b < B; ++b) {
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        const S* dyr = dy.ptr() + ((static_cast<int64_t>(b) * Ho + oh) * Wo + ow) * d;
        for (int c = 0; c < d; ++c) {
          S best = x(b, oh * ph, ow * pw, c);
          int bi = 0, bj = 0;
          for (int i = 0; i < ph; ++i) {
            for (int j = 0; j < pw; ++j) {
              const S v = x(b, oh * ph + i, ow * pw + j, c);
              if (v > best) {
                best = v;
                bi = i;
                bj = j;
              }
            }
          }
          dx(b, oh * ph + bi, ow * pw + bj, c) += dyr[c];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// small elementwise helpers
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape)
    throw ShapeError("add: shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
  Tensor<S> c(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i)
    c.data[static_cast<size_t>(i)] = a.data[static_cast<size_t>(i)] + b.data[static_cast<size_t>(i)];
  return c;
}

}  // namespace turbovit::ops
