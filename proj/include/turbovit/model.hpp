#pragma once

// Model = an ArchSpec bound to parameters. Building is deterministic for a
// given seed; forward is a pure function of (model, input). The cached
// forward plus `backward` provide end-to-end gradients for the sanity-fit
// and for finite-difference verification.

#include "turbovit/arch.hpp"

namespace turbovit {

template <class S>
struct Model {
  ArchSpec spec;
  std::vector<LoweredBlock> layout;
  StemParams<S> stem;
  std::vector<BlockParams<S>> blocks;
  Tensor<S> head_ln_g, head_ln_b;
  Tensor<S> head_w, head_b;

  int64_t parameter_count() const {
    int64_t n = 0;
    const_cast<Model<S>*>(this)->for_each_parameter(
        [&n](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
  }

  // Visits every parameter tensor in a fixed, documented order: stem convs,
  // positional embedding, blocks front to back, classifier head.
  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    for (size_t i = 0; i < stem.conv_w.size(); ++i) {
      fn("stem.conv" + std::to_string(i) + ".w", stem.conv_w[i]);
      fn("stem.conv" + std::to_string(i) + ".b", stem.conv_b[i]);
    }
    fn("stem.pos", stem.pos);
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = layout[i].name + ".";
      BlockParams<S>& b = blocks[i];
      fn(p + "ln1.g", b.ln1_g);
      fn(p + "ln1.b", b.ln1_b);
      fn(p + "qkv.w", b.attn.qkv_w);
      fn(p + "qkv.b", b.attn.qkv_b);
      fn(p + "proj.w", b.attn.proj_w);
      fn(p + "proj.b", b.attn.proj_b);
      if (!b.sc_w.empty()) {
        fn(p + "shortcut.w", b.sc_w);
        fn(p + "shortcut.b", b.sc_b);
      }
      fn(p + "ln2.g", b.ln2_g);
      fn(p + "ln2.b", b.ln2_b);
      fn(p + "fc1.w", b.fc1_w);
      fn(p + "fc1.b", b.fc1_b);
      fn(p + "fc2.w", b.fc2_w);
      fn(p + "fc2.b", b.fc2_b);
    }
    fn("head.ln.g", head_ln_g);
    fn("head.ln.b", head_ln_b);
    fn("head.fc.w", head_w);
    fn("head.fc.b", head_b);
  }
};

template <class S>
Model<S> build(const ArchSpec& spec, uint64_t seed) {
  ValidationReport vr = validate(spec);
  if (!vr.feasible)
    throw ConfigError("build: " + (vr.failures.empty() ? std::string("infeasible spec")
                                                       : vr.failures.front()));
  Model<S> m;
  m.spec = spec;
  m.layout = lower(spec);
  Rng rng(seed);
  constexpr double kInitStd = 0.02;

  for (const ConvSpec& c : spec.stem) {
    Tensor<S> w({c.out, c.in, c.kernel, c.kernel});
    rng.fill_trunc_normal(w, kInitStd);
    m.stem.conv_w.push_back(std::move(w));
    m.stem.conv_b.push_back(Tensor<S>({c.out}));
  }
  auto [gh, gw] = stem_grid(spec);
  m.stem.pos = Tensor<S>({gh, gw, spec.stem.back().out});
  rng.fill_trunc_normal(m.stem.pos, kInitStd);

  for (const LoweredBlock& lb : m.layout) {
    const int d = lb.cfg.dim, o = lb.cfg.out_dim, hid = lb.cfg.mlp_hidden();
    BlockParams<S> b;
    b.ln1_g = Tensor<S>::full({d}, S(1));
    b.ln1_b = Tensor<S>({d});
    b.attn.qkv_w = Tensor<S>({d, 3 * d});
    rng.fill_trunc_normal(b.attn.qkv_w, kInitStd);
    b.attn.qkv_b = Tensor<S>({3 * d});
    b.attn.proj_w = Tensor<S>({d, o});
    rng.fill_trunc_normal(b.attn.proj_w, kInitStd);
    b.attn.proj_b = Tensor<S>({o});
    if (lb.cfg.transition()) {
      b.sc_w = Tensor<S>({d, o});
      rng.fill_trunc_normal(b.sc_w, kInitStd);
      b.sc_b = Tensor<S>({o});
    }
    b.ln2_g = Tensor<S>::full({o}, S(1));
    b.ln2_b = Tensor<S>({o});
    b.fc1_w = Tensor<S>({o, hid});
    rng.fill_trunc_normal(b.fc1_w, kInitStd);
    b.fc1_b = Tensor<S>({hid});
    b.fc2_w = Tensor<S>({hid, o});
    rng.fill_trunc_normal(b.fc2_w, kInitStd);
    b.fc2_b = Tensor<S>({o});
    m.blocks.push_back(std::move(b));
  }

  m.head_ln_g = Tensor<S>::full({spec.head.dim}, S(1));
  m.head_ln_b = Tensor<S>({spec.head.dim});
  m.head_w = Tensor<S>({spec.head.dim, spec.head.classes});
  rng.fill_trunc_normal(m.head_w, kInitStd);
  m.head_b = Tensor<S>({spec.head.classes});
  return m;
}

template <class S>
struct ModelCache {
  StemCache<S> stem;
  std::vector<BlockCache<S>> blocks;
  Tensor<S> pooled;  // token mean, [B, D]
  Tensor<S> normed;  // after the head layer norm
  int final_h = 0, final_w = 0;
};

// images: [B, 3, R, R] with R = spec.input_resolution. Returns [B, classes].
template <class S>
Tensor<S> forward(const Model<S>& model, const Tensor<S>& images, ModelCache<S>* cache = nullptr) {
  if (images.ndim() != 4 || images.size(1) != 3 ||
      images.size(2) != model.spec.input_resolution ||
      images.size(3) != model.spec.input_resolution)
    throw ConfigError("forward: input " + shape_str(images.shape) + " does not match resolution " +
                      std::to_string(model.spec.input_resolution));
  if (cache) cache->blocks.resize(model.blocks.size());

  Tensor<S> grid = patch_embed(images, model.spec.stem, model.stem, cache ? &cache->stem : nullptr);
  for (size_t i = 0; i < model.blocks.size(); ++i)
    grid = vit_block(grid, model.layout[i].cfg, model.blocks[i],
                     cache ? &cache->blocks[i] : nullptr);

  const int B = grid.size(0), H = grid.size(1), W = grid.size(2), D = grid.size(3);
  Tensor<S> pooled({B, D});
  const S inv = S(1) / static_cast<S>(H * W);
  for (int b = 0; b < B; ++b) {
    S* dst = pooled.ptr() + static_cast<int64_t>(b) * D;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const S* src = grid.ptr() + ((static_cast<int64_t>(b) * H + i) * W + j) * D;
        for (int c = 0; c < D; ++c) dst[c] += src[c];
      }
    for (int c = 0; c < D; ++c) dst[c] *= inv;
  }

  Tensor<S> normed = ops::layer_norm(pooled, model.head_ln_g, model.head_ln_b,
                                     static_cast<S>(kLayerNormEps));
  Tensor<S> logits = ops::linear(normed, model.head_w, model.head_b);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->normed = std::move(normed);
    cache->final_h = H;
    cache->final_w = W;
  }
  return logits;
}

template <class S>
struct ModelGrads {
  StemGrads<S> stem;
  std::vector<BlockGrads<S>> blocks;
  Tensor<S> head_ln_g, head_ln_b, head_w, head_b;

  // Mirrors Model::for_each_parameter ordering exactly.
  template <class Fn>
  void for_each(const Model<S>& model, Fn&& fn) {
    for (size_t i = 0; i < stem.conv_w.size(); ++i) {
      fn("stem.conv" + std::to_string(i) + ".w", stem.conv_w[i]);
      fn("stem.conv" + std::to_string(i) + ".b", stem.conv_b[i]);
    }
    fn("stem.pos", stem.pos);
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = model.layout[i].name + ".";
      BlockGrads<S>& b = blocks[i];
      fn(p + "ln1.g", b.ln1_g);
      fn(p + "ln1.b", b.ln1_b);
      fn(p + "qkv.w", b.attn.qkv_w);
      fn(p + "qkv.b", b.attn.qkv_b);
      fn(p + "proj.w", b.attn.proj_w);
      fn(p + "proj.b", b.attn.proj_b);
      if (!model.blocks[i].sc_w.empty()) {
        fn(p + "shortcut.w", b.sc_w);
        fn(p + "shortcut.b", b.sc_b);
      }
      fn(p + "ln2.g", b.ln2_g);
      fn(p + "ln2.b", b.ln2_b);
      fn(p + "fc1.w", b.fc1_w);
      fn(p + "fc1.b", b.fc1_b);
      fn(p + "fc2.w", b.fc2_w);
      fn(p + "fc2.b", b.fc2_b);
    }
    fn("head.ln.g", head_ln_g);
    fn("head.ln.b", head_ln_b);
    fn("head.fc.w", head_w);
    fn("head.fc.b", head_b);
  }
};

// dlogits: [B, classes]. Populates parameter gradients; input gradients are
// not returned (images are data, not parameters).
template <class S>
ModelGrads<S> backward(const Model<S>& model, const ModelCache<S>& cache,
                       const Tensor<S>& dlogits) {
  ModelGrads<S> g;
  g.blocks.resize(model.blocks.size());

  Tensor<S> dnormed;
  ops::linear_backward(cache.normed, model.head_w, dlogits, dnormed, g.head_w, g.head_b);
  Tensor<S> dpooled;
  ops::layer_norm_backward(cache.pooled, model.head_ln_g, static_cast<S>(kLayerNormEps), dnormed,
                           dpooled, g.head_ln_g, g.head_ln_b);

  const int B = dpooled.size(0), D = dpooled.size(1);
  const int H = cache.final_h, W = cache.final_w;
  Tensor<S> dgrid({B, H, W, D});
  const S inv = S(1) / static_cast<S>(H * W);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        S* dst = dgrid.ptr() + ((static_cast<int64_t>(b) * H + i) * W + j) * D;
        const S* src = dpooled.ptr() + static_cast<int64_t>(b) * D;
        for (int c = 0; c < D; ++c) dst[c] = src[c] * inv;
      }

  for (int i = static_cast<int>(model.blocks.size()) - 1; i >= 0; --i) {
    Tensor<S> dx;
    vit_block_backward(model.layout[static_cast<size_t>(i)].cfg,
                       model.blocks[static_cast<size_t>(i)],
                       cache.blocks[static_cast<size_t>(i)], dgrid, dx,
                       g.blocks[static_cast<size_t>(i)]);
    dgrid = std::move(dx);
  }

  patch_embed_backward(model.spec.stem, model.stem, cache.stem, dgrid, g.stem);
  return g;
}

// theta -= lr * grad over every parameter.
template <class S>
void sgd_step(Model<S>& model, ModelGrads<S>& grads, S lr) {
  std::vector<Tensor<S>*> ps, gs;
  model.for_each_parameter([&ps](const std::string&, Tensor<S>& t) { ps.push_back(&t); });
  grads.for_each(model, [&gs](const std::string&, Tensor<S>& t) { gs.push_back(&t); });
  for (size_t i = 0; i < ps.size(); ++i) {
    if (gs[i]->empty()) continue;
    for (int64_t k = 0; k < ps[i]->numel(); ++k)
      ps[i]->data[static_cast<size_t>(k)] -= lr * gs[i]->data[static_cast<size_t>(k)];
  }
}

}  // namespace turbovit
