#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "turbovit/complexity.hpp"
#include "turbovit/model.hpp"
#include "turbovit/search.hpp"

using namespace turbovit;

TEST_SUITE_BEGIN("complexity");

namespace {

const std::string kConfigDir = TURBOVIT_CONFIG_DIR;

int64_t instrumented_forward_macs(const ArchSpec& spec, uint64_t seed) {
  Model<float> m = build<float>(spec, seed);
  TensorF img({1, 3, spec.input_resolution, spec.input_resolution});
  Rng rng(seed + 1);
  rng.fill_uniform(img, -1.0, 1.0);
  ops::MacCountScope scope;
  (void)forward(m, img);
  return scope.count();
}

const LayerCost& find_row(const ComplexityReport& rep, const std::string& name) {
  for (const LayerCost& r : rep.rows)
    if (r.name == name) return r;
  REQUIRE(false);
  return rep.rows.front();
}

}  // namespace

TEST_CASE("params: a single linear layer counts in*out + out") {
  // Head classifier from width 4 to 8 classes: 4*8 + 8 = 40.
  ArchSpec s;
  s.input_resolution = 16;
  s.stem = {{3, 4, 7, 4, 3}};
  BlockGroupSpec g;
  g.count = 1;
  g.dim = 4;
  g.heads = 1;
  g.kind = AttentionKind::kGlobal;
  s.groups = {g};
  s.head.dim = 4;
  s.head.classes = 8;
  ComplexityReport rep = count_params(s);
  CHECK(find_row(rep, "head.fc").params == 40);
}

TEST_CASE("flops: linear 4->8 over 2 tokens is 64 MACs") {
  Rng rng(0);
  TensorF x({2, 4}), w({4, 8}), b({8});
  rng.fill_uniform(x, -1.0, 1.0);
  rng.fill_uniform(w, -1.0, 1.0);
  ops::MacCountScope scope;
  (void)ops::linear(x, w, b);
  CHECK(scope.count() == 64);
}

TEST_CASE("attention FLOP example: GA, dim 64, heads 2, 16 tokens, no pool") {
  // QKV 16*64*192 + scores 2*16*16*32 + AV 2*16*16*32 + proj 16*64*64 = 294912.
  Rng rng(5);
  AttentionParams<float> p;
  p.qkv_w = TensorF({64, 192});
  p.qkv_b = TensorF({192});
  p.proj_w = TensorF({64, 64});
  p.proj_b = TensorF({64});
  rng.fill_uniform(p.qkv_w, -0.1, 0.1);
  rng.fill_uniform(p.proj_w, -0.1, 0.1);
  TensorF x({1, 16, 64});
  rng.fill_uniform(x, -1.0, 1.0);
  AttentionConfig cfg;
  cfg.dim = cfg.out_dim = 64;
  cfg.heads = 2;
  cfg.grid_h = cfg.grid_w = 4;
  ops::MacCountScope scope;
  (void)attention(x, cfg, p);
  CHECK(scope.count() == 294912);
}

TEST_CASE("params: one GA block, dim 64, heads 2, mlp ratio 4") {
  // QKV 12480 + proj 4160 + two LNs 256 + MLP 33088 = 49984.
  ArchSpec s;
  s.input_resolution = 16;
  s.stem = {{3, 64, 7, 4, 3}};
  BlockGroupSpec g;
  g.count = 1;
  g.dim = 64;
  g.heads = 2;
  g.kind = AttentionKind::kGlobal;
  s.groups = {g};
  s.head.dim = 64;
  s.head.classes = 10;
  ComplexityReport rep = count_params(s);
  CHECK(find_row(rep, "g0.b0").params == 49984);
  // Row sum equals the report total (integer identity).
  int64_t sum = 0;
  for (const LayerCost& r : rep.rows) sum += r.params;
  CHECK(sum == rep.total_params);
}

TEST_CASE("canonical spec reproduces the published totals") {
  ArchSpec spec = load_arch(kConfigDir + "/turbovit.json");
  ComplexityReport rep = analyze(spec, 224);
  CHECK(rep.total_params == 12701288);
  CHECK(rep.total_flops == 2201996544);
  CHECK(std::abs(rep.total_params / 1e6 - 12.7) / 12.7 < 0.02);
  CHECK(std::abs(rep.total_flops / 1e9 - 2.2) / 2.2 < 0.05);
}

TEST_CASE("oracle equivalence: counts match the builder and the instrumented forward exactly") {
  // Randomized toy specs; exact integer equality on both counters.
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
  Rng rng(2024);
  for (int i = 0; i < 22; ++i) {
    ArchSpec s = sample_candidate(space, 32, rng);
    ComplexityReport rep = analyze(s, 32);
    Model<float> m = build<float>(s, 100 + i);
    CHECK(m.parameter_count() == rep.total_params);
    CHECK(instrumented_forward_macs(s, 100 + i) == rep.total_flops);
  }
}

TEST_CASE("oracle equivalence holds on the shipped tiny spec too") {
  ArchSpec s = load_arch(kConfigDir + "/tiny32.json");
  ComplexityReport rep = analyze(s, 32);
  Model<float> m = build<float>(s, 1);
  CHECK(m.parameter_count() == rep.total_params);
  CHECK(instrumented_forward_macs(s, 1) == rep.total_flops);
}

TEST_CASE("oracle equivalence: two-conv stem, mlp_ratio override, rectangular units/pools") {
  ArchSpec s;
  s.name = "oddball";
  s.input_resolution = 32;
  s.stem = {{3, 6, 3, 2, 1}, {6, 12, 3, 2, 1}};  // 32 -> 16 -> 8 grid
  BlockGroupSpec g0;
  g0.count = 2;
  g0.dim = 12;
  g0.heads = 3;
  g0.kind = AttentionKind::kMaskUnit;
  g0.unit_h = 2;
  g0.unit_w = 4;
  g0.mlp_ratio = 2;
  BlockGroupSpec g1;
  g1.count = 1;
  g1.dim = 20;
  g1.heads = 2;
  g1.kind = AttentionKind::kGlobal;
  g1.pool_h = 2;
  g1.pool_w = 1;  // 8x8 -> 4x8
  g1.mlp_ratio = 3;
  s.groups = {g0, g1};
  s.head.dim = 20;
  s.head.classes = 6;
  REQUIRE(validate(s).feasible);
  ComplexityReport rep = analyze(s, 32);
  Model<float> m = build<float>(s, 3);
  CHECK(m.parameter_count() == rep.total_params);
  CHECK(instrumented_forward_macs(s, 3) == rep.total_flops);

  TensorF img({2, 3, 32, 32});
  Rng rng(9);
  rng.fill_uniform(img, -1.0, 1.0);
  TensorF logits = forward(m, img);
  CHECK(logits.shape == Shape{2, 6});
  CHECK(logits.all_finite());
}

TEST_CASE("analyze honors an alternate feasible resolution") {
  ArchSpec spec = load_arch(kConfigDir + "/turbovit.json");
  ComplexityReport base = analyze(spec, 224);
  ComplexityReport big = analyze(spec, 448);  // 112x112 grid; all divisibility holds
  CHECK(big.resolution == 448);
  CHECK(big.total_flops > base.total_flops);
  // Only the positional embedding changes the parameter count with resolution.
  CHECK(big.total_params - base.total_params == (112 * 112 - 56 * 56) * 128);
}

TEST_CASE("monotonicity: one more block strictly increases both totals") {
  ArchSpec base = load_arch(kConfigDir + "/tiny32.json");
  ComplexityReport rep0 = analyze(base, 32);
  for (size_t g = 0; g < base.groups.size(); ++g) {
    ArchSpec more = base;
    more.groups[g].count += 1;
    ComplexityReport rep1 = analyze(more, 32);
    CHECK(rep1.total_params > rep0.total_params);
    CHECK(rep1.total_flops > rep0.total_flops);
  }
}

TEST_CASE("pool effect: a q-pool site strictly cuts FLOPs downstream") {
  ArchSpec flat;
  flat.input_resolution = 64;
  flat.stem = {{3, 16, 7, 4, 3}};
  BlockGroupSpec g0;
  g0.count = 1;
  g0.dim = 16;
  g0.heads = 2;
  g0.kind = AttentionKind::kGlobal;
  BlockGroupSpec g1 = g0;
  g1.count = 3;
  flat.groups = {g0, g1};
  flat.head.dim = 16;
  flat.head.classes = 10;

  ArchSpec pooled = flat;
  pooled.groups[1].pool_h = pooled.groups[1].pool_w = 2;

  ComplexityReport a = analyze(flat, 64);
  ComplexityReport b = analyze(pooled, 64);
  CHECK(b.total_flops < a.total_flops);
  // Every block of the pooled group costs strictly less.
  for (int blk = 0; blk < 3; ++blk) {
    const std::string name = "g1.b" + std::to_string(blk);
    CHECK(find_row(b, name).flops < find_row(a, name).flops);
  }
  // Parameters are unchanged by pooling (same structure, no transition).
  CHECK(a.total_params == b.total_params);
}

TEST_CASE("mask unit vs global attention: MUA <= GA, equality at full-grid units") {
  ArchSpec ga;
  ga.input_resolution = 64;
  ga.stem = {{3, 16, 7, 4, 3}};  // 16x16 grid
  BlockGroupSpec g;
  g.count = 2;
  g.dim = 16;
  g.heads = 2;
  g.kind = AttentionKind::kGlobal;
  ga.groups = {g};
  ga.head.dim = 16;
  ga.head.classes = 10;

  ArchSpec mua_small = ga;
  mua_small.groups[0].kind = AttentionKind::kMaskUnit;
  mua_small.groups[0].unit_h = mua_small.groups[0].unit_w = 4;

  ArchSpec mua_full = ga;
  mua_full.groups[0].kind = AttentionKind::kMaskUnit;
  mua_full.groups[0].unit_h = mua_full.groups[0].unit_w = 16;

  const int64_t f_ga = analyze(ga, 64).total_flops;
  const int64_t f_small = analyze(mua_small, 64).total_flops;
  const int64_t f_full = analyze(mua_full, 64).total_flops;
  CHECK(f_small < f_ga);
  CHECK(f_full == f_ga);
}

TEST_CASE("report options: double-count flag and norm/act estimates") {
  ArchSpec s = load_arch(kConfigDir + "/tiny32.json");
  ComplexityReport base = analyze(s, 32);
  CountingOptions two;
  two.flops_per_mac = 2;
  ComplexityReport doubled = analyze(s, 32, two);
  CHECK(doubled.total_flops == 2 * base.total_flops);
  CHECK(doubled.total_params == base.total_params);
  CHECK(doubled.convention.find("2 FLOPs") != std::string::npos);

  CountingOptions with_act;
  with_act.include_norm_act = true;
  ComplexityReport acts = analyze(s, 32, with_act);
  CHECK(acts.total_flops > base.total_flops);
  // Named sub-percent contributors on this scale stay well under 10%.
  CHECK(acts.total_flops < base.total_flops * 11 / 10);
}

TEST_CASE("render: text and CSV agree on the totals") {
  ArchSpec s = load_arch(kConfigDir + "/tiny32.json");
  ComplexityReport rep = analyze(s, 32);
  const std::string text = render_text(rep);
  const std::string csv = render_csv(rep);
  CHECK(text.find(std::to_string(rep.total_params)) != std::string::npos);
  CHECK(text.find(std::to_string(rep.total_flops)) != std::string::npos);
  CHECK(csv.find("TOTAL,," + std::to_string(rep.total_params) + "," +
                 std::to_string(rep.total_flops)) != std::string::npos);
  // CSV has header + one row per layer + total.
  const size_t lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(lines == rep.rows.size() + 2);
}

TEST_CASE("analyze: infeasible spec throws") {
  ArchSpec s = load_arch(kConfigDir + "/tiny32.json");
  s.groups[0].heads = 7;
  CHECK_THROWS_AS(analyze(s, 32), ConfigError);
  // Feasible at 32 but not at 40 (13x13 grid breaks pool divisibility).
  ArchSpec t = load_arch(kConfigDir + "/tiny32.json");
  CHECK_THROWS_AS(analyze(t, 40), ConfigError);
}

TEST_SUITE_END();
