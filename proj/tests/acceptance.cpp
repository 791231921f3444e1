// Acceptance suite: every release criterion checked at its stated tolerance,
// one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "turbovit/bench.hpp"
#include "turbovit/complexity.hpp"
#include "turbovit/model.hpp"
#include "turbovit/search.hpp"
#include "turbovit/train.hpp"

using namespace turbovit;

namespace {

std::string g_config_dir = TURBOVIT_CONFIG_DIR;
int g_failures = 0;

void criterion(int number, const std::string& name, double time_limit_s,
               const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (time_limit_s > 0 && secs > time_limit_s) {
    ok = false;
    detail += (detail.empty() ? "" : "; ") + std::string("exceeded time limit of ") +
              std::to_string(time_limit_s) + "s";
  }
  if (!ok) ++g_failures;
  std::printf("%s  criterion %2d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(),
              secs, detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

ArchSpec micro_spec() {
  ArchSpec s;
  s.name = "micro16";
  s.input_resolution = 16;
  s.stem = {{3, 8, 7, 4, 3}};
  BlockGroupSpec g0;
  g0.count = 1;
  g0.dim = 8;
  g0.heads = 2;
  g0.kind = AttentionKind::kMaskUnit;
  g0.unit_h = g0.unit_w = 2;
  BlockGroupSpec g1;
  g1.count = 1;
  g1.dim = 8;
  g1.heads = 2;
  g1.kind = AttentionKind::kGlobal;
  g1.pool_h = g1.pool_w = 2;
  s.groups = {g0, g1};
  s.head.dim = 8;
  s.head.classes = 10;
  return s;
}

template <class S>
BlockParams<S> random_block_params(const BlockConfig& cfg, Rng& rng) {
  BlockParams<S> p;
  const int d = cfg.dim, o = cfg.out_dim, hid = cfg.mlp_hidden();
  p.ln1_g = Tensor<S>({d});
  rng.fill_uniform(p.ln1_g, 0.5, 1.5);
  p.ln1_b = Tensor<S>({d});
  rng.fill_uniform(p.ln1_b, -0.2, 0.2);
  p.attn.qkv_w = Tensor<S>({d, 3 * d});
  rng.fill_uniform(p.attn.qkv_w, -0.5, 0.5);
  p.attn.qkv_b = Tensor<S>({3 * d});
  rng.fill_uniform(p.attn.qkv_b, -0.5, 0.5);
  p.attn.proj_w = Tensor<S>({d, o});
  rng.fill_uniform(p.attn.proj_w, -0.5, 0.5);
  p.attn.proj_b = Tensor<S>({o});
  rng.fill_uniform(p.attn.proj_b, -0.5, 0.5);
  if (cfg.transition()) {
    p.sc_w = Tensor<S>({d, o});
    rng.fill_uniform(p.sc_w, -0.5, 0.5);
    p.sc_b = Tensor<S>({o});
    rng.fill_uniform(p.sc_b, -0.5, 0.5);
  }
  p.ln2_g = Tensor<S>({o});
  rng.fill_uniform(p.ln2_g, 0.5, 1.5);
  p.ln2_b = Tensor<S>({o});
  rng.fill_uniform(p.ln2_b, -0.2, 0.2);
  p.fc1_w = Tensor<S>({o, hid});
  rng.fill_uniform(p.fc1_w, -0.5, 0.5);
  p.fc1_b = Tensor<S>({hid});
  rng.fill_uniform(p.fc1_b, -0.5, 0.5);
  p.fc2_w = Tensor<S>({hid, o});
  rng.fill_uniform(p.fc2_w, -0.5, 0.5);
  p.fc2_b = Tensor<S>({o});
  rng.fill_uniform(p.fc2_b, -0.5, 0.5);
  return p;
}

// Mirrors the tiny-grammar generator conventions; small enough to enumerate.
std::vector<ArchSpec> enumerate_tiny_grammar(const DesignSpace& space, int resolution) {
  std::vector<ArchSpec> all;
  const int g0_grid =
      ops::conv_out_size(resolution, space.stem_kernel, space.stem_stride, space.stem_padding);
  const int g1_grid = g0_grid / space.pool_side;
  for (int ga_start = 0; ga_start <= 2; ++ga_start)
    for (int c0 = space.min_count; c0 <= space.max_count; ++c0)
      for (int c1 = space.min_count; c1 <= space.max_count; ++c1)
        for (int d0 : space.dim_choices)
          for (int d1 : space.dim_choices) {
            std::vector<int> u0s = {0}, u1s = {0};
            if (ga_start > 0) {
              u0s.clear();
              for (int u : space.unit_choices)
                if (g0_grid % u == 0) u0s.push_back(u);
            }
            if (ga_start > 1) {
              u1s.clear();
              for (int u : space.unit_choices)
                if (g1_grid % u == 0) u1s.push_back(u);
            }
            for (int u0 : u0s)
              for (int u1 : u1s) {
                ArchSpec s;
                s.input_resolution = resolution;
                s.stem = {{3, d0, space.stem_kernel, space.stem_stride, space.stem_padding}};
                BlockGroupSpec g0;
                g0.count = c0;
                g0.dim = d0;
                g0.heads = 2;
                if (ga_start > 0) {
                  g0.kind = AttentionKind::kMaskUnit;
                  g0.unit_h = g0.unit_w = u0;
                } else {
                  g0.kind = AttentionKind::kGlobal;
                }
                BlockGroupSpec g1;
                g1.count = c1;
                g1.dim = d1;
                g1.heads = 2;
                g1.pool_h = g1.pool_w = space.pool_side;
                if (ga_start > 1) {
                  g1.kind = AttentionKind::kMaskUnit;
                  g1.unit_h = g1.unit_w = u1;
                } else {
                  g1.kind = AttentionKind::kGlobal;
                }
                s.groups = {g0, g1};
                s.head.dim = d1;
                s.head.classes = space.classes;
                all.push_back(std::move(s));
              }
          }
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_config_dir = argv[1];
  const std::string canonical_path = g_config_dir + "/turbovit.json";

  criterion(1, "parameter reproduction: 12.7M +- 2%", 1.0, [&](std::string& detail) {
    ComplexityReport rep = count_params(load_arch(canonical_path));
    const double m = rep.total_params / 1e6;
    detail = std::to_string(rep.total_params) + " params (" + std::to_string(m) + "M)";
    return std::abs(m - 12.7) / 12.7 < 0.02;
  });

  criterion(2, "FLOP reproduction: 2.2G +- 5% at 224 (MAC convention)", 1.0,
            [&](std::string& detail) {
    ComplexityReport rep = count_flops(load_arch(canonical_path), 224);
    const double g = rep.total_flops / 1e9;
    detail = std::to_string(rep.total_flops) + " MACs (" + std::to_string(g) + "G), convention " +
             rep.convention;
    return std::abs(g - 2.2) / 2.2 < 0.05;
  });

  criterion(3, "design constraints: <= 2.5 GFLOPs, exactly 3 q-pool sites, both patterns", 0,
            [&](std::string& detail) {
    ArchSpec spec = load_arch(canonical_path);
    IndicatorResult ind = indicator(spec, SearchConstraints{});
    ValidationReport vr = validate(spec);
    detail = "flops " + std::to_string(ind.flops) + ", q_pool_sites " +
             std::to_string(vr.q_pool_sites);
    for (const std::string& r : ind.reasons) detail += "; " + r;
    return ind.ok && vr.q_pool_sites == 3 && vr.has_mask_unit && vr.has_global;
  });

  criterion(4, "counting oracles: builder scalars and instrumented MACs, exact, >= 20 specs", 30.0,
            [&](std::string& detail) {
    DesignSpace space;
    space.dim_choices = {8, 12, 16};
    space.head_choices = {1, 2, 4};
    space.min_groups = 2;
    space.max_groups = 4;
    space.min_count = 1;
    space.max_count = 3;
    space.unit_choices = {1, 2, 4};
    space.min_pools = 1;
    space.max_pools = 2;
    space.classes = 7;
    Rng rng(4242);
    int checked = 0;
    for (int i = 0; i < 24; ++i) {
      ArchSpec s = sample_candidate(space, 32, rng);
      ComplexityReport rep = analyze(s, 32);
      Model<float> m = build<float>(s, 50 + i);
      if (m.parameter_count() != rep.total_params) {
        detail = "param mismatch on spec " + spec_hash(s);
        return false;
      }
      TensorF img({1, 3, 32, 32});
      Rng irng(60 + i);
      irng.fill_uniform(img, -1.0, 1.0);
      ops::MacCountScope scope;
      (void)forward(m, img);
      if (scope.count() != rep.total_flops) {
        detail = "FLOP mismatch on spec " + spec_hash(s) + ": counted " +
                 std::to_string(scope.count()) + " vs " + std::to_string(rep.total_flops);
        return false;
      }
      ++checked;
    }
    detail = std::to_string(checked) + " randomized specs, exact integer equality";
    return checked >= 20;
  });

  criterion(5, "attention equivalence: full-grid mask unit == global, < 1e-5, 10 draws", 0,
            [&](std::string& detail) {
    Rng rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      BlockConfig ga;
      ga.dim = ga.out_dim = 16;
      ga.heads = 4;
      ga.kind = AttentionKind::kGlobal;
      BlockConfig mua = ga;
      mua.kind = AttentionKind::kMaskUnit;
      mua.unit_h = mua.unit_w = 4;
      BlockParams<float> p = random_block_params<float>(ga, rng);
      TensorF x({2, 4, 4, 16});
      rng.fill_uniform(x, -1.0, 1.0);
      TensorF a = vit_block(x, ga, p);
      TensorF b = vit_block(x, mua, p);
      worst = std::max(worst, static_cast<double>(oracles::max_abs_diff(a, b)));
    }
    detail = "max abs diff " + std::to_string(worst);
    return worst < 1e-5;
  });

  criterion(6, "mask unit locality: outside perturbations change nothing, bitwise, 10 trials", 0,
            [&](std::string& detail) {
    Rng rng(99);
    BlockConfig cfg;
    cfg.dim = cfg.out_dim = 8;
    cfg.heads = 2;
    cfg.kind = AttentionKind::kMaskUnit;
    cfg.unit_h = cfg.unit_w = 2;
    BlockParams<float> p = random_block_params<float>(cfg, rng);
    for (int trial = 0; trial < 10; ++trial) {
      TensorF x({1, 4, 4, 8});
      rng.fill_uniform(x, -1.0, 1.0);
      TensorF y0 = vit_block(x, cfg, p);
      TensorF x2 = x;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          if (r < 2 && c < 2) continue;
          for (int ch = 0; ch < 8; ++ch)
            x2(0, r, c, ch) += static_cast<float>(rng.uniform(0.5, 1.5));
        }
      TensorF y1 = vit_block(x2, cfg, p);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
          for (int ch = 0; ch < 8; ++ch)
            if (y0(0, r, c, ch) != y1(0, r, c, ch)) {
              detail = "trial " + std::to_string(trial) + " changed the protected unit";
              return false;
            }
    }
    detail = "10 trials bitwise clean";
    return true;
  });

  criterion(7, "gradient checks: every primitive and a full toy block, rel err < 1e-4, h=1e-3", 0,
            [&](std::string& detail) {
    double worst = 0.0;
    Rng rng(23);
    {  // matmul
      TensorD a({4, 6}), b({6, 3});
      rng.fill_uniform(a, -2.0, 2.0);
      rng.fill_uniform(b, -2.0, 2.0);
      const TensorD probe = oracles::make_probe({4, 3}, 301);
      auto obj = [&] { return oracles::probe_dot(probe, ops::matmul(a, b)); };
      TensorD da, db;
      ops::matmul_backward(a, b, probe, da, db);
      worst = std::max({worst, oracles::fd_check(a, da, obj), oracles::fd_check(b, db, obj)});
    }
    {  // softmax
      TensorD x({3, 7});
      rng.fill_uniform(x, -2.0, 2.0);
      const TensorD probe = oracles::make_probe({3, 7}, 302);
      auto obj = [&] { return oracles::probe_dot(probe, ops::softmax_lastdim(x)); };
      TensorD dx = ops::softmax_lastdim_backward(ops::softmax_lastdim(x), probe);
      worst = std::max(worst, oracles::fd_check(x, dx, obj));
    }
    {  // layer norm
      TensorD x({4, 6}), gamma({6}), beta({6});
      rng.fill_uniform(x, -2.0, 2.0);
      rng.fill_uniform(gamma, 0.5, 1.5);
      rng.fill_uniform(beta, -0.5, 0.5);
      const TensorD probe = oracles::make_probe({4, 6}, 303);
      auto obj = [&] { return oracles::probe_dot(probe, ops::layer_norm(x, gamma, beta, 1e-6)); };
      TensorD dx, dgamma, dbeta;
      ops::layer_norm_backward(x, gamma, 1e-6, probe, dx, dgamma, dbeta);
      worst = std::max({worst, oracles::fd_check(x, dx, obj), oracles::fd_check(gamma, dgamma, obj),
                        oracles::fd_check(beta, dbeta, obj)});
    }
    {  // gelu
      TensorD x({5, 5});
      rng.fill_uniform(x, -2.0, 2.0);
      const TensorD probe = oracles::make_probe({5, 5}, 304);
      auto obj = [&] { return oracles::probe_dot(probe, ops::gelu(x)); };
      worst = std::max(worst, oracles::fd_check(x, ops::gelu_backward(x, probe), obj));
    }
    {  // conv2d
      TensorD x({1, 2, 5, 5}), w({3, 2, 3, 3}), b({3});
      rng.fill_uniform(x, -2.0, 2.0);
      rng.fill_uniform(w, -1.0, 1.0);
      rng.fill_uniform(b, -1.0, 1.0);
      const TensorD probe = oracles::make_probe({1, 3, 3, 3}, 305);
      auto obj = [&] { return oracles::probe_dot(probe, ops::conv2d(x, w, b, 2, 1)); };
      TensorD dx, dw, db;
      ops::conv2d_backward(x, w, 2, 1, probe, dx, dw, db);
      worst = std::max({worst, oracles::fd_check(x, dx, obj), oracles::fd_check(w, dw, obj),
                        oracles::fd_check(b, db, obj)});
    }
    {  // max pool over well-separated values
      TensorD x({1, 4, 4, 2});
      std::vector<double> levels;
      for (int i = 0; i < 32; ++i) levels.push_back(-1.6 + 0.1 * i);
      Rng shuffle(43);
      for (size_t i = levels.size(); i > 1; --i)
        std::swap(levels[i - 1], levels[size_t(shuffle.below(int64_t(i)))]);
      for (int64_t i = 0; i < x.numel(); ++i) x.data[size_t(i)] = levels[size_t(i)];
      const TensorD probe = oracles::make_probe({1, 2, 2, 2}, 306);
      auto obj = [&] { return oracles::probe_dot(probe, ops::max_pool_tokens(x, 2, 2)); };
      worst = std::max(worst, oracles::fd_check(x, ops::max_pool_tokens_backward(x, 2, 2, probe), obj));
    }
    {  // full toy block: transition + mask units + q-pool
      Rng brng(18);
      BlockConfig cfg;
      cfg.dim = 6;
      cfg.out_dim = 8;
      cfg.heads = 2;
      cfg.kind = AttentionKind::kMaskUnit;
      cfg.unit_h = cfg.unit_w = 2;
      cfg.pool_h = cfg.pool_w = 2;
      cfg.mlp_ratio = 2;
      BlockParams<double> p = random_block_params<double>(cfg, brng);
      TensorD x({1, 4, 4, 6});
      brng.fill_uniform(x, -1.0, 1.0);
      const TensorD probe = oracles::make_probe({1, 2, 2, 8}, 307);
      auto obj = [&] { return oracles::probe_dot(probe, vit_block(x, cfg, p)); };
      BlockCache<double> cache;
      (void)vit_block(x, cfg, p, &cache);
      TensorD dx;
      BlockGrads<double> grads;
      vit_block_backward(cfg, p, cache, probe, dx, grads);
      worst = std::max({worst, oracles::fd_check(x, dx, obj),
                        oracles::fd_check(p.attn.qkv_w, grads.attn.qkv_w, obj),
                        oracles::fd_check(p.attn.proj_w, grads.attn.proj_w, obj),
                        oracles::fd_check(p.sc_w, grads.sc_w, obj),
                        oracles::fd_check(p.ln1_g, grads.ln1_g, obj),
                        oracles::fd_check(p.ln2_g, grads.ln2_g, obj),
                        oracles::fd_check(p.fc1_w, grads.fc1_w, obj),
                        oracles::fd_check(p.fc2_w, grads.fc2_w, obj)});
    }
    detail = "worst relative error " + std::to_string(worst);
    return worst < 1e-4;
  });

  criterion(8, "search: exhaustive argmax on a <= 5000-spec grammar; byte-identical traces", 120.0,
            [&](std::string& detail) {
    SearchProblem p = load_problem(g_config_dir + "/search-tiny.json");
    const std::vector<ArchSpec> all = enumerate_tiny_grammar(p.space, p.constraints.resolution);
    if (all.size() > 5000) {
      detail = "grammar too large: " + std::to_string(all.size());
      return false;
    }
    bool any = false;
    double best_u = 0.0;
    std::string best_hash;
    for (const ArchSpec& s : all) {
      IndicatorResult ind = indicator(s, p.constraints);
      if (!ind.ok) continue;
      const std::string h = spec_hash(s);
      const double u = p.perf.score(h, ind.params, ind.flops);
      if (!any || u > best_u || (u == best_u && h < best_hash)) {
        any = true;
        best_u = u;
        best_hash = h;
      }
    }
    if (!any) {
      detail = "no feasible point in the grammar";
      return false;
    }
    SearchResult r1 = search(p);
    SearchResult r2 = search(p);
    if (trace_csv(r1.trace) != trace_csv(r2.trace)) {
      detail = "trace not reproducible";
      return false;
    }
    if (!r1.found || spec_hash(r1.best_spec) != best_hash) {
      detail = "search best " + (r1.found ? spec_hash(r1.best_spec) : std::string("none")) +
               " vs exhaustive " + best_hash;
      return false;
    }
    detail = std::to_string(all.size()) + " specs enumerated; argmax " + best_hash +
             " found; trace byte-identical";
    return true;
  });

  criterion(9, "bench protocol: n=1000 runs at batch 1 and 32, throughput identity within 1%", 0,
            [&](std::string& detail) {
    Model<float> micro = build<float>(micro_spec(), 1);
    for (int batch : {1, 32}) {
      BenchReport rep = run_bench(micro, batch, 1000, 10, 5);
      if (static_cast<int>(rep.samples_ms.size()) != 1000) {
        detail = "batch " + std::to_string(batch) + ": " +
                 std::to_string(rep.samples_ms.size()) + " samples";
        return false;
      }
      const double expect = batch / (rep.mean_ms / 1000.0);
      if (std::abs(rep.throughput - expect) / expect > 0.01) {
        detail = "throughput identity violated at batch " + std::to_string(batch);
        return false;
      }
    }
    // The canonical model completes the protocol at both batch sizes
    // (single run; absolute numbers are hardware-specific, not targets).
    Model<float> canonical = build<float>(load_arch(canonical_path), 0);
    for (int batch : {1, 32}) {
      BenchReport rep = run_bench(canonical, batch, 1, 0, 5);
      if (rep.samples_ms.size() != 1) return false;
    }
    detail = "micro model: 2x1000 samples; canonical completes at batch 1 and 32";
    return true;
  });

  criterion(10, "trainability: starts within 0.15 of ln(4), halves within 200 steps", 120.0,
            [&](std::string& detail) {
    ArchSpec spec = load_arch(g_config_dir + "/tiny32.json");
    ToyTask task;
    task.seed = 1;
    FitOptions opts;
    opts.steps = 200;
    opts.lr = 0.01f;
    opts.seed = 1;
    FitResult r = fit(spec, task, opts);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "loss %.4f -> %.4f, eval accuracy %.3f", r.losses.front(),
                  r.losses.back(), r.eval_accuracy);
    detail = buf;
    if (r.diverged) return false;
    return std::abs(r.losses.front() - std::log(4.0)) <= 0.15 &&
           r.losses.back() < 0.5 * r.losses.front();
  });

  std::printf("N/A   criterion 11: top-1 accuracy reproduction is out of scope by design; "
              "criteria 4-7 and 10 are the property-based substitutes\n");

  if (g_failures) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
