#pragma once

// The block vocabulary: mask unit partitioning, multi-head attention with
// optional query pooling, the pre-norm ViT block, and the conv patch-embed
// stem. Forward functions optionally record a cache so the matching
// *_backward can run without retaining global state.

#include "turbovit/ops.hpp"
#include "turbovit/tensor.hpp"

namespace turbovit {

enum class AttentionKind { kGlobal, kMaskUnit };

inline const char* kind_name(AttentionKind k) {
  return k == AttentionKind::kGlobal ? "global" : "mask_unit";
}

// Geometry of one attention call: tokens laid out row-major over a
// grid_h x grid_w grid (the mask unit for MUA, the full grid for GA).
// pool_h/pool_w > 1 max-pools the query path, shrinking the output grid.
struct AttentionConfig {
  int dim = 0;       // incoming token width; QKV operates at this width
  int out_dim = 0;   // width after the output projection
  int heads = 1;
  int grid_h = 0;
  int grid_w = 0;
  int pool_h = 1;
  int pool_w = 1;

  int tokens() const { return grid_h * grid_w; }
  int out_tokens() const { return (grid_h / pool_h) * (grid_w / pool_w); }
  int head_dim() const { return dim / heads; }
  bool pooled() const { return pool_h > 1 || pool_w > 1; }

  void check() const {
    if (dim <= 0 || out_dim <= 0 || heads <= 0 || dim % heads != 0)
      throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                        std::to_string(heads));
    if (grid_h < 1 || grid_w < 1)
      throw ConfigError("attention: empty token grid");
    if (pool_h < 1 || pool_w < 1 || grid_h % pool_h != 0 || grid_w % pool_w != 0)
      throw ConfigError("attention: pool " + std::to_string(pool_h) + "x" + std::to_string(pool_w) +
                        " does not divide token grid " + std::to_string(grid_h) + "x" +
                        std::to_string(grid_w));
  }
};

template <class S>
struct AttentionParams {
  Tensor<S> qkv_w;   // [dim, 3*dim]
  Tensor<S> qkv_b;   // [3*dim]
  Tensor<S> proj_w;  // [dim, out_dim]
  Tensor<S> proj_b;  // [out_dim]
};

template <class S>
struct AttentionCache {
  Tensor<S> x;         // [N, T, dim]
  Tensor<S> qkv;       // [N, T, 3*dim]
  Tensor<S> q_scaled;  // [N, Tq, dim], pooled and pre-scaled by 1/sqrt(head_dim)
  Tensor<S> attn;      // [N, heads, Tq, T]
  Tensor<S> ctx;       // [N, Tq, dim]
};

// ---------------------------------------------------------------------------
// mask unit partition: [B, H, W, d] -> [B*nUnits, uh*uw, d]
// Units are ordered row-major over the grid, tokens row-major within a unit.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> mask_unit_partition(const Tensor<S>& x, int uh, int uw) {
  if (x.ndim() != 4)
    throw ShapeError("mask_unit_partition: expected [B,H,W,d], got " + shape_str(x.shape));
  const int B = x.size(0), H = x.size(1), W = x.size(2), d = x.size(3);
  if (uh < 1 || uw < 1 || H % uh != 0 || W % uw != 0)
    throw ConfigError("mask_unit_partition: unit " + std::to_string(uh) + "x" + std::to_string(uw) +
                      " does not divide grid " + std::to_string(H) + "x" + std::to_string(W));
  const int nuh = H / uh, nuw = W / uw;
  Tensor<S> out({B * nuh * nuw, uh * uw, d});
  for (int b = 0; b < B; ++b)
    for (int ur = 0; ur < nuh; ++ur)
      for (int uc = 0; uc < nuw; ++uc) {
        const int unit = (b * nuh + ur) * nuw + uc;
        for (int i = 0; i < uh; ++i)
          for (int j = 0; j < uw; ++j) {
            const S* src = x.ptr() + ((static_cast<int64_t>(b) * H + ur * uh + i) * W + uc * uw + j) * d;
            S* dst = out.ptr() + (static_cast<int64_t>(unit) * (uh * uw) + i * uw + j) * d;
            std::copy(src, src + d, dst);
          }
      }
  return out;
}

// Exact inverse of mask_unit_partition for a B x H x W grid of uh x uw units.
template <class S>
Tensor<S> mask_unit_unpartition(const Tensor<S>& seq, int B, int H, int W, int uh, int uw) {
  const int nuh = H / uh, nuw = W / uw;
  const int d = seq.size(2);
  if (seq.size(0) != B * nuh * nuw || seq.size(1) != uh * uw)
    throw ShapeError("mask_unit_unpartition: sequence " + shape_str(seq.shape) +
                     " does not tile a " + std::to_string(H) + "x" + std::to_string(W) + " grid");
  Tensor<S> out({B, H, W, d});
  for (int b = 0; b < B; ++b)
    for (int ur = 0; ur < nuh; ++ur)
      for (int uc = 0; uc < nuw; ++uc) {
        const int unit = (b * nuh + ur) * nuw + uc;
        for (int i = 0; i < uh; ++i)
          for (int j = 0; j < uw; ++j) {
            const S* src = seq.ptr() + (static_cast<int64_t>(unit) * (uh * uw) + i * uw + j) * d;
            S* dst = out.ptr() + ((static_cast<int64_t>(b) * H + ur * uh + i) * W + uc * uw + j) * d;
            std::copy(src, src + d, dst);
          }
      }
  return out;
}

// ---------------------------------------------------------------------------
// multi-head scaled dot-product attention with optional query pooling
// ---------------------------------------------------------------------------

namespace detail {

// Gather head `h` columns of a [N,T,3d] qkv buffer into a contiguous [rows, dh]
// scratch. `which` selects q/k/v (0/1/2); `transpose` emits [dh, rows] instead.
template <class S>
void gather_head(const Tensor<S>& src, int n, int head, int dh, int dim, int which,
                 int64_t rows, bool transpose, S* out) {
  const int64_t row_stride = src.shape.back();
  const S* base = src.ptr() + static_cast<int64_t>(n) * rows * row_stride + which * dim + head * dh;
  for (int64_t r = 0; r < rows; ++r) {
    const S* s = base + r * row_stride;
    if (transpose) {
      for (int c = 0; c < dh; ++c) out[static_cast<int64_t>(c) * rows + r] = s[c];
    } else {
      std::copy(s, s + dh, out + r * dh);
    }
  }
}

template <class S>
void scatter_head_add(S* dst, int n, int head, int dh, int dim, int which, int64_t rows,
                      int64_t row_stride, const S* src) {
  S* base = dst + static_cast<int64_t>(n) * rows * row_stride + which * dim + head * dh;
  for (int64_t r = 0; r < rows; ++r) {
    S* d = base + r * row_stride;
    for (int c = 0; c < dh; ++c) d[c] += src[r * dh + c];
  }
}

}  // namespace detail

// x: [N, T, dim] token sequences, T = cfg.grid_h * cfg.grid_w.
// Returns [N, T', out_dim] with T' = T / (pool_h * pool_w). Queries are
// computed for all tokens and then max-pooled over the grid; keys and values
// stay at full resolution.
template <class S>
Tensor<S> attention(const Tensor<S>& x, const AttentionConfig& cfg,
                    const AttentionParams<S>& params, AttentionCache<S>* cache = nullptr) {
  cfg.check();
  if (x.ndim() != 3 || x.size(2) != cfg.dim || x.size(1) != cfg.tokens())
    throw ShapeError("attention: input " + shape_str(x.shape) + " vs dim " +
                     std::to_string(cfg.dim) + ", grid " + std::to_string(cfg.grid_h) + "x" +
                     std::to_string(cfg.grid_w));
  const int N = x.size(0), T = x.size(1);
  const int d = cfg.dim, h = cfg.heads, dh = cfg.head_dim();
  const int Tq = cfg.out_tokens();
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<S> qkv = ops::linear(x, params.qkv_w, params.qkv_b);  // [N, T, 3d]

  // Pooled, pre-scaled queries as a [N, Tq, d] tensor.
  Tensor<S> q({N, T, d});
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t) {
      const S* s = qkv.ptr() + (static_cast<int64_t>(n) * T + t) * 3 * d;
      S* dst = q.ptr() + (static_cast<int64_t>(n) * T + t) * d;
      for (int c = 0; c < d; ++c) dst[c] = s[c] * scale;
    }
  Tensor<S> qp;
  if (cfg.pooled()) {
    Tensor<S> qg = q.reshaped({N, cfg.grid_h, cfg.grid_w, d});
    qp = ops::max_pool_tokens(qg, cfg.pool_h, cfg.pool_w).reshaped({N, Tq, d});
  } else {
    qp = q.reshaped({N, Tq, d});
  }

  Tensor<S> attn({N, h, Tq, T});
  Tensor<S> ctx({N, Tq, d});
  std::vector<S> kT(static_cast<size_t>(dh) * T), v(static_cast<size_t>(T) * dh);
  std::vector<S> qh(static_cast<size_t>(Tq) * dh), scores(static_cast<size_t>(Tq) * T);
  std::vector<S> ctx_h(static_cast<size_t>(Tq) * dh);
  for (int n = 0; n < N; ++n) {
    for (int hd = 0; hd < h; ++hd) {
      detail::gather_head(qp, n, hd, dh, d, 0, Tq, false, qh.data());
      detail::gather_head(qkv, n, hd, dh, d, 1, T, true, kT.data());
      detail::gather_head(qkv, n, hd, dh, d, 2, T, false, v.data());
      ops::matmul_raw(qh.data(), kT.data(), scores.data(), Tq, dh, T);
      Tensor<S> sc({Tq, T}, std::vector<S>(scores.begin(), scores.end()));
      Tensor<S> a = ops::softmax_lastdim(sc);
      std::copy(a.data.begin(), a.data.end(),
                attn.ptr() + ((static_cast<int64_t>(n) * h + hd) * Tq) * T);
      ops::matmul_raw(a.ptr(), v.data(), ctx_h.data(), Tq, T, dh);
      for (int t = 0; t < Tq; ++t) {
        S* dst = ctx.ptr() + (static_cast<int64_t>(n) * Tq + t) * d + hd * dh;
        std::copy(ctx_h.begin() + static_cast<int64_t>(t) * dh,
                  ctx_h.begin() + static_cast<int64_t>(t + 1) * dh, dst);
      }
    }
  }

  Tensor<S> out = ops::linear(ctx, params.proj_w, params.proj_b);  // [N, Tq, out_dim]
  if (cache) {
    cache->x = x;
    cache->qkv = std::move(qkv);
    cache->q_scaled = std::move(qp);
    cache->attn = std::move(attn);
    cache->ctx = std::move(ctx);
  }
  return out;
}

template <class S>
struct AttentionGrads {
  Tensor<S> qkv_w, qkv_b, proj_w, proj_b;
};

template <class S>
void attention_backward(const AttentionConfig& cfg, const AttentionParams<S>& params,
                        const AttentionCache<S>& cache, const Tensor<S>& dout, Tensor<S>& dx,
                        AttentionGrads<S>& grads) {
  const int N = cache.x.size(0), T = cache.x.size(1);
  const int d = cfg.dim, h = cfg.heads, dh = cfg.head_dim();
  const int Tq = cfg.out_tokens();
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<S> dctx;
  ops::linear_backward(cache.ctx, params.proj_w, dout, dctx, grads.proj_w, grads.proj_b);

  Tensor<S> dqkv({N, T, 3 * d});
  Tensor<S> dqp({N, Tq, d});  // grad wrt pooled, scaled queries
  std::vector<S> kh(static_cast<size_t>(T) * dh), v(static_cast<size_t>(T) * dh);
  std::vector<S> vT(static_cast<size_t>(dh) * T), qh(static_cast<size_t>(Tq) * dh);
  std::vector<S> dctx_h(static_cast<size_t>(Tq) * dh), dattn(static_cast<size_t>(Tq) * T);
  std::vector<S> dv(static_cast<size_t>(T) * dh), dqh(static_cast<size_t>(Tq) * dh);
  std::vector<S> dk(static_cast<size_t>(T) * dh), attnT(static_cast<size_t>(T) * Tq);
  for (int n = 0; n < N; ++n) {
    for (int hd = 0; hd < h; ++hd) {
      detail::gather_head(cache.qkv, n, hd, dh, d, 1, T, false, kh.data());
      detail::gather_head(cache.qkv, n, hd, dh, d, 2, T, false, v.data());
      detail::gather_head(cache.q_scaled, n, hd, dh, d, 0, Tq, false, qh.data());
      for (int t = 0; t < Tq; ++t) {
        const S* src = dctx.ptr() + (static_cast<int64_t>(n) * Tq + t) * d + hd * dh;
        std::copy(src, src + dh, dctx_h.data() + static_cast<int64_t>(t) * dh);
      }
      const S* attn_h = cache.attn.ptr() + ((static_cast<int64_t>(n) * h + hd) * Tq) * T;

      // dattn = dctx_h * v^T
      for (int i = 0; i < dh; ++i)
        for (int t = 0; t < T; ++t) vT[static_cast<size_t>(i) * T + t] = v[static_cast<size_t>(t) * dh + i];
      ops::matmul_raw(dctx_h.data(), vT.data(), dattn.data(), Tq, dh, T);
      // dv = attn^T * dctx_h
      for (int i = 0; i < Tq; ++i)
        for (int t = 0; t < T; ++t) attnT[static_cast<size_t>(t) * Tq + i] = attn_h[static_cast<int64_t>(i) * T + t];
      ops::matmul_raw(attnT.data(), dctx_h.data(), dv.data(), T, Tq, dh);

      // softmax backward, rows of length T
      Tensor<S> a({Tq, T}, std::vector<S>(attn_h, attn_h + static_cast<int64_t>(Tq) * T));
      Tensor<S> da({Tq, T}, std::vector<S>(dattn.begin(), dattn.end()));
      Tensor<S> ds = ops::softmax_lastdim_backward(a, da);

      // dq_scaled = ds * k ; dk = ds^T * q_scaled
      ops::matmul_raw(ds.ptr(), kh.data(), dqh.data(), Tq, T, dh);
      std::vector<S> dsT(static_cast<size_t>(T) * Tq);
      for (int i = 0; i < Tq; ++i)
        for (int t = 0; t < T; ++t) dsT[static_cast<size_t>(t) * Tq + i] = ds.ptr()[static_cast<int64_t>(i) * T + t];
      ops::matmul_raw(dsT.data(), qh.data(), dk.data(), T, Tq, dh);

      detail::scatter_head_add(dqp.ptr(), n, hd, dh, d, 0, Tq, d, dqh.data());
      detail::scatter_head_add(dqkv.ptr(), n, hd, dh, d, 1, T, 3 * d, dk.data());
      detail::scatter_head_add(dqkv.ptr(), n, hd, dh, d, 2, T, 3 * d, dv.data());
    }
  }

  // Un-pool the query gradient, then un-scale into the qkv gradient.
  Tensor<S> dq_full;
  if (cfg.pooled()) {
    // Rebuild the scaled query grid to recover the pooling argmax.
    Tensor<S> q({N, T, d});
    for (int n = 0; n < N; ++n)
      for (int t = 0; t < T; ++t) {
        const S* s = cache.qkv.ptr() + (static_cast<int64_t>(n) * T + t) * 3 * d;
        S* dst = q.ptr() + (static_cast<int64_t>(n) * T + t) * d;
        for (int c = 0; c < d; ++c) dst[c] = s[c] * scale;
      }
    Tensor<S> qg = q.reshaped({N, cfg.grid_h, cfg.grid_w, d});
    Tensor<S> dqg = dqp.reshaped({N, cfg.grid_h / cfg.pool_h, cfg.grid_w / cfg.pool_w, d});
    dq_full = ops::max_pool_tokens_backward(qg, cfg.pool_h, cfg.pool_w, dqg).reshaped({N, T, d});
  } else {
    dq_full = dqp.reshaped({N, T, d});
  }
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t) {
      const S* src = dq_full.ptr() + (static_cast<int64_t>(n) * T + t) * d;
      S* dst = dqkv.ptr() + (static_cast<int64_t>(n) * T + t) * 3 * d;
      for (int c = 0; c < d; ++c) dst[c] += src[c] * scale;
    }

  ops::linear_backward(cache.x, params.qkv_w, dqkv, dx, grads.qkv_w, grads.qkv_b);
}

// ---------------------------------------------------------------------------
// ViT block: pre-norm attention + MLP with residuals; the shortcut is pooled
// (and linearly projected on width transitions) so shapes always agree.
// ---------------------------------------------------------------------------

struct BlockConfig {
  int dim = 0;      // incoming width
  int out_dim = 0;  // outgoing width (transition when != dim)
  int heads = 1;
  AttentionKind kind = AttentionKind::kGlobal;
  int unit_h = 0, unit_w = 0;  // mask unit on the incoming grid (kMaskUnit)
  int pool_h = 1, pool_w = 1;  // query pool applied in this block
  int mlp_ratio = 4;

  bool transition() const { return dim != out_dim; }
  bool pooled() const { return pool_h > 1 || pool_w > 1; }
  int mlp_hidden() const { return mlp_ratio * out_dim; }

  AttentionConfig attention_config(int grid_h, int grid_w) const {
    AttentionConfig a;
    a.dim = dim;
    a.out_dim = out_dim;
    a.heads = heads;
    a.pool_h = pool_h;
    a.pool_w = pool_w;
    if (kind == AttentionKind::kMaskUnit) {
      a.grid_h = unit_h;
      a.grid_w = unit_w;
    } else {
      a.grid_h = grid_h;
      a.grid_w = grid_w;
    }
    return a;
  }
};

template <class S>
struct BlockParams {
  Tensor<S> ln1_g, ln1_b;  // [dim]
  AttentionParams<S> attn;
  Tensor<S> sc_w, sc_b;    // [dim, out_dim] / [out_dim], present on transitions only
  Tensor<S> ln2_g, ln2_b;  // [out_dim]
  Tensor<S> fc1_w, fc1_b;  // [out_dim, hidden]
  Tensor<S> fc2_w, fc2_b;  // [hidden, out_dim]
};

template <class S>
struct BlockCache {
  Tensor<S> x;        // [B, H, W, dim]
  Tensor<S> n1;       // layer-normed input
  AttentionCache<S> attn;
  Tensor<S> sc_pooled;  // shortcut after pooling, before projection (empty if no transition)
  Tensor<S> x1;       // residual sum after attention
  Tensor<S> n2;
  Tensor<S> mlp_pre;  // fc1 output before GELU
  Tensor<S> mlp_act;  // after GELU
};

constexpr double kLayerNormEps = 1e-6;

template <class S>
Tensor<S> vit_block(const Tensor<S>& x, const BlockConfig& cfg, const BlockParams<S>& params,
                    BlockCache<S>* cache = nullptr) {
  if (x.ndim() != 4 || x.size(3) != cfg.dim)
    throw ShapeError("vit_block: input " + shape_str(x.shape) + " vs dim " + std::to_string(cfg.dim));
  const int B = x.size(0), H = x.size(1), W = x.size(2);
  if (cfg.kind == AttentionKind::kMaskUnit &&
      (cfg.unit_h < 1 || cfg.unit_w < 1 || H % cfg.unit_h != 0 || W % cfg.unit_w != 0))
    throw ConfigError("vit_block: mask unit " + std::to_string(cfg.unit_h) + "x" +
                      std::to_string(cfg.unit_w) + " does not divide grid " + std::to_string(H) +
                      "x" + std::to_string(W));
  const int Ho = H / cfg.pool_h, Wo = W / cfg.pool_w;
  const AttentionConfig acfg = cfg.attention_config(H, W);
  const S eps = static_cast<S>(kLayerNormEps);

  Tensor<S> n1 = ops::layer_norm(x, params.ln1_g, params.ln1_b, eps);

  Tensor<S> attn_grid;
  if (cfg.kind == AttentionKind::kMaskUnit) {
    Tensor<S> seq = mask_unit_partition(n1, cfg.unit_h, cfg.unit_w);
    Tensor<S> a = attention(seq, acfg, params.attn, cache ? &cache->attn : nullptr);
    attn_grid = mask_unit_unpartition(a, B, Ho, Wo, cfg.unit_h / cfg.pool_h,
                                      cfg.unit_w / cfg.pool_w);
  } else {
    Tensor<S> seq = n1.reshaped({B, H * W, cfg.dim});
    Tensor<S> a = attention(seq, acfg, params.attn, cache ? &cache->attn : nullptr);
    attn_grid = a.reshaped({B, Ho, Wo, cfg.out_dim});
  }

  // Residual shortcut: plain (pooled) x when widths agree; on width
  // transitions the normalized features are pooled and linearly projected,
  // which keeps the residual stream scale stable across transitions.
  Tensor<S> sc;
  Tensor<S> sc_pooled;
  if (cfg.transition()) {
    sc_pooled = cfg.pooled() ? ops::max_pool_tokens(n1, cfg.pool_h, cfg.pool_w) : n1;
    sc = ops::linear(sc_pooled, params.sc_w, params.sc_b);
  } else {
    sc = cfg.pooled() ? ops::max_pool_tokens(x, cfg.pool_h, cfg.pool_w) : x;
  }
  Tensor<S> x1 = ops::add(sc, attn_grid);

  Tensor<S> n2 = ops::layer_norm(x1, params.ln2_g, params.ln2_b, eps);
  Tensor<S> pre = ops::linear(n2, params.fc1_w, params.fc1_b);
  Tensor<S> act = ops::gelu(pre);
  Tensor<S> mlp = ops::linear(act, params.fc2_w, params.fc2_b);
  Tensor<S> y = ops::add(x1, mlp);

  if (cache) {
    cache->x = x;
    cache->n1 = std::move(n1);
    cache->sc_pooled = std::move(sc_pooled);
    cache->x1 = std::move(x1);
    cache->n2 = std::move(n2);
    cache->mlp_pre = std::move(pre);
    cache->mlp_act = std::move(act);
  }
  return y;
}

template <class S>
struct BlockGrads {
  Tensor<S> ln1_g, ln1_b;
  AttentionGrads<S> attn;
  Tensor<S> sc_w, sc_b;
  Tensor<S> ln2_g, ln2_b;
  Tensor<S> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <class S>
void vit_block_backward(const BlockConfig& cfg, const BlockParams<S>& params,
                        const BlockCache<S>& cache, const Tensor<S>& dy, Tensor<S>& dx,
                        BlockGrads<S>& grads) {
  const int B = cache.x.size(0), H = cache.x.size(1), W = cache.x.size(2);
  const int Ho = H / cfg.pool_h, Wo = W / cfg.pool_w;
  const AttentionConfig acfg = cfg.attention_config(H, W);
  const S eps = static_cast<S>(kLayerNormEps);

  // MLP branch.
  Tensor<S> dact;
  ops::linear_backward(cache.mlp_act, params.fc2_w, dy, dact, grads.fc2_w, grads.fc2_b);
  Tensor<S> dpre = ops::gelu_backward(cache.mlp_pre, dact);
  Tensor<S> dn2;
  ops::linear_backward(cache.n2, params.fc1_w, dpre, dn2, grads.fc1_w, grads.fc1_b);
  Tensor<S> dx1;
  ops::layer_norm_backward(cache.x1, params.ln2_g, eps, dn2, dx1, grads.ln2_g, grads.ln2_b);
  // residual: dx1 += dy
  for (int64_t i = 0; i < dx1.numel(); ++i) dx1.data[static_cast<size_t>(i)] += dy.data[static_cast<size_t>(i)];

  // Attention branch.
  Tensor<S> dseq_out;
  if (cfg.kind == AttentionKind::kMaskUnit) {
    dseq_out = mask_unit_partition(dx1, cfg.unit_h / cfg.pool_h, cfg.unit_w / cfg.pool_w);
  } else {
    dseq_out = dx1.reshaped({B, Ho * Wo, cfg.out_dim});
  }
  Tensor<S> dseq_in;
  attention_backward(acfg, params.attn, cache.attn, dseq_out, dseq_in, grads.attn);
  Tensor<S> dn1;
  if (cfg.kind == AttentionKind::kMaskUnit) {
    dn1 = mask_unit_unpartition(dseq_in, B, H, W, cfg.unit_h, cfg.unit_w);
  } else {
    dn1 = dseq_in.reshaped({B, H, W, cfg.dim});
  }

  // Transition shortcut reads the normalized features; its gradient joins the
  // attention branch ahead of the ln1 backward.
  if (cfg.transition()) {
    Tensor<S> d_pooled;
    ops::linear_backward(cache.sc_pooled, params.sc_w, dx1, d_pooled, grads.sc_w, grads.sc_b);
    Tensor<S> d_n1 = cfg.pooled()
                         ? ops::max_pool_tokens_backward(cache.n1, cfg.pool_h, cfg.pool_w, d_pooled)
                         : std::move(d_pooled);
    for (int64_t i = 0; i < dn1.numel(); ++i)
      dn1.data[static_cast<size_t>(i)] += d_n1.data[static_cast<size_t>(i)];
  }
  ops::layer_norm_backward(cache.x, params.ln1_g, eps, dn1, dx, grads.ln1_g, grads.ln1_b);

  // Plain residual shortcut on width-preserving blocks.
  if (!cfg.transition()) {
    if (cfg.pooled()) {
      Tensor<S> d_unpooled = ops::max_pool_tokens_backward(cache.x, cfg.pool_h, cfg.pool_w, dx1);
      for (int64_t i = 0; i < dx.numel(); ++i)
        dx.data[static_cast<size_t>(i)] += d_unpooled.data[static_cast<size_t>(i)];
    } else {
      for (int64_t i = 0; i < dx.numel(); ++i)
        dx.data[static_cast<size_t>(i)] += dx1.data[static_cast<size_t>(i)];
    }
  }
}

// ---------------------------------------------------------------------------
// patch embed: strided conv stem -> [B, H0, W0, d0] token grid + positional
// embedding
// ---------------------------------------------------------------------------

struct ConvSpec {
  int in = 3;
  int out = 0;
  int kernel = 7;
  int stride = 4;
  int padding = 3;
};

template <class S>
struct StemParams {
  std::vector<Tensor<S>> conv_w;  // per layer, [out, in, k, k]
  std::vector<Tensor<S>> conv_b;  // per layer, [out]
  Tensor<S> pos;                  // [H0, W0, d0]
};

template <class S>
struct StemCache {
  std::vector<Tensor<S>> inputs;  // NCHW input of each conv layer
};

template <class S>
Tensor<S> patch_embed(const Tensor<S>& images, const std::vector<ConvSpec>& stem,
                      const StemParams<S>& params, StemCache<S>* cache = nullptr) {
  if (images.ndim() != 4)
    throw ShapeError("patch_embed: expected [B,C,H,W] images, got " + shape_str(images.shape));
  Tensor<S> cur = images;
  for (size_t i = 0; i < stem.size(); ++i) {
    if (cur.size(1) != stem[i].in)
      throw ConfigError("patch_embed: stem layer " + std::to_string(i) + " expects " +
                        std::to_string(stem[i].in) + " channels, got " + std::to_string(cur.size(1)));
    if (cache) cache->inputs.push_back(cur);
    cur = ops::conv2d(cur, params.conv_w[i], params.conv_b[i], stem[i].stride, stem[i].padding);
  }
  const int B = cur.size(0), d = cur.size(1), H = cur.size(2), W = cur.size(3);
  if (params.pos.ndim() != 3 || params.pos.size(0) != H || params.pos.size(1) != W ||
      params.pos.size(2) != d)
    throw ConfigError("patch_embed: positional embedding " + shape_str(params.pos.shape) +
                      " vs token grid [" + std::to_string(H) + "x" + std::to_string(W) + "x" +
                      std::to_string(d) + "]");
  // NCHW -> [B, H, W, d] with the positional embedding added.
  Tensor<S> grid({B, H, W, d});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < d; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          grid(b, i, j, c) = cur(b, c, i, j) + params.pos(i, j, c);
  return grid;
}

template <class S>
struct StemGrads {
  std::vector<Tensor<S>> conv_w, conv_b;
  Tensor<S> pos;
};

// dgrid: [B, H0, W0, d0]. Image gradients are discarded (inputs are data).
template <class S>
void patch_embed_backward(const std::vector<ConvSpec>& stem, const StemParams<S>& params,
                          const StemCache<S>& cache, const Tensor<S>& dgrid, StemGrads<S>& grads) {
  const int B = dgrid.size(0), H = dgrid.size(1), W = dgrid.size(2), d = dgrid.size(3);
  grads.pos = Tensor<S>({H, W, d});
  Tensor<S> dcur({B, d, H, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < d; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const S g = dgrid(b, i, j, c);
          dcur(b, c, i, j) = g;
          grads.pos(i, j, c) += g;
        }
  grads.conv_w.resize(stem.size());
  grads.conv_b.resize(stem.size());
  for (int i = static_cast<int>(stem.size()) - 1; i >= 0; --i) {
    Tensor<S> dx;
    ops::conv2d_backward(cache.inputs[static_cast<size_t>(i)], params.conv_w[static_cast<size_t>(i)],
                         stem[static_cast<size_t>(i)].stride, stem[static_cast<size_t>(i)].padding,
                         dcur, dx, grads.conv_w[static_cast<size_t>(i)],
                         grads.conv_b[static_cast<size_t>(i)]);
    dcur = std::move(dx);
  }
}

}  // namespace turbovit
