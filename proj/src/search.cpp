#include "turbovit/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "turbovit/complexity.hpp"

namespace turbovit {

using nlohmann::json;

namespace {

std::string giga(int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2fe9", static_cast<double>(v) / 1e9);
  return buf;
}

}  // namespace

IndicatorResult indicator(const ArchSpec& spec, const SearchConstraints& constraints) {
  IndicatorResult res;
  ValidationReport vr = validate(spec);
  if (!vr.feasible) {
    res.reasons.push_back("spec infeasible: " +
                          (vr.failures.empty() ? "unknown" : vr.failures.front()));
    return res;
  }
  ComplexityReport rep = analyze(spec, constraints.resolution);
  res.params = rep.total_params;
  res.flops = rep.total_flops;
  if (rep.total_flops > constraints.flop_budget)
    res.reasons.push_back("flops " + giga(rep.total_flops) + " > " +
                          giga(constraints.flop_budget));
  if (vr.q_pool_sites != constraints.required_q_pool_sites)
    res.reasons.push_back("q_pool_sites " + std::to_string(vr.q_pool_sites) + " != required " +
                          std::to_string(constraints.required_q_pool_sites));
  if (constraints.require_mua_and_ga) {
    if (!vr.has_mask_unit) res.reasons.push_back("no mask_unit attention group");
    if (!vr.has_global) res.reasons.push_back("no global attention group");
  }
  res.ok = res.reasons.empty();
  return res;
}

// ---------------------------------------------------------------------------
// performance function
// ---------------------------------------------------------------------------

double SyntheticSurrogate::operator()(double params_m, double flops_g) const {
  return a_max * (1.0 - std::exp(-rate * std::sqrt(params_m * flops_g)));
}

double PerformanceFn::accuracy(const std::string& hash, double params_m, double flops_g) const {
  if (!supplied.empty()) {
    auto it = supplied.find(hash);
    if (it == supplied.end())
      throw ConfigError("accuracy table has no entry for spec " + hash);
    return it->second;
  }
  if (synthetic) return (*synthetic)(params_m, flops_g);
  throw ConfigError("no accuracy proxy configured");
}

double PerformanceFn::score(const std::string& hash, int64_t params, int64_t flops) const {
  const double p = static_cast<double>(params) / 1e6;
  const double f = static_cast<double>(flops) / 1e9;
  const double a = accuracy(hash, p, f);
  return scale * 20.0 * (kappa * std::log10(a) - beta * std::log10(p) - gamma * std::log10(f));
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

namespace {

void check_space(const DesignSpace& s) {
  if (s.dim_choices.empty() || s.head_choices.empty() || s.unit_choices.empty())
    throw ConfigError("design space: empty choice list");
  if (s.min_groups < 1 || s.max_groups < s.min_groups)
    throw ConfigError("design space: bad group range");
  if (s.min_count < 1 || s.max_count < s.min_count)
    throw ConfigError("design space: bad count range");
  if (s.min_pools < 0 || s.max_pools < s.min_pools)
    throw ConfigError("design space: bad pool range");
  if (s.min_pools > s.max_groups - 1)
    throw ConfigError("design space: min_pools exceeds poolable groups");
  if (s.pool_side < 2) throw ConfigError("design space: pool_side must be >= 2");
}

template <class T>
int index_of(const std::vector<T>& v, T value) {
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i] == value) return static_cast<int>(i);
  return -1;
}

int pick(const std::vector<int>& v, Rng& rng) {
  return v[static_cast<size_t>(rng.below(static_cast<int64_t>(v.size())))];
}

}  // namespace

ArchSpec sample_candidate(const DesignSpace& space, int resolution, Rng& rng) {
  check_space(space);
  int g0 = ops::conv_out_size(resolution, space.stem_kernel, space.stem_stride,
                              space.stem_padding);
  if (g0 < 1)
    throw ConfigError("design space: stem produces an empty grid at resolution " +
                      std::to_string(resolution));

  for (int attempt = 0; attempt < 4096; ++attempt) {
    const int n_groups =
        space.min_groups + static_cast<int>(rng.below(space.max_groups - space.min_groups + 1));
    const int pool_cap = std::min(space.max_pools, n_groups - 1);
    if (pool_cap < space.min_pools) continue;
    const int n_pools =
        space.min_pools + static_cast<int>(rng.below(pool_cap - space.min_pools + 1));

    // Pool sites live at group entries; the first group always runs at the
    // full post-stem grid.
    std::vector<int> sites;
    for (int g = 1; g < n_groups; ++g) sites.push_back(g);
    for (size_t i = sites.size(); i > 1; --i)
      std::swap(sites[i - 1], sites[static_cast<size_t>(rng.below(static_cast<int64_t>(i)))]);
    sites.resize(static_cast<size_t>(n_pools));
    std::vector<bool> pooled(static_cast<size_t>(n_groups), false);
    for (int s : sites) pooled[static_cast<size_t>(s)] = true;

    // Mask-unit groups form a prefix, global groups the suffix.
    const int ga_start = static_cast<int>(rng.below(n_groups + 1));

    ArchSpec spec;
    spec.input_resolution = resolution;
    int h = g0, w = g0;
    int dim_in = 0;
    bool ok = true;
    for (int g = 0; g < n_groups && ok; ++g) {
      BlockGroupSpec grp;
      grp.count = space.min_count + static_cast<int>(rng.below(space.max_count - space.min_count + 1));
      grp.mlp_ratio = space.mlp_ratio;
      if (pooled[static_cast<size_t>(g)]) {
        if (h % space.pool_side != 0 || w % space.pool_side != 0) {
          ok = false;
          break;
        }
        grp.pool_h = grp.pool_w = space.pool_side;
      }
      const int gh = h / grp.pool_h, gw = w / grp.pool_w;

      bool placed = false;
      for (int tries = 0; tries < 16 && !placed; ++tries) {
        const int dim = pick(space.dim_choices, rng);
        std::vector<int> heads;
        for (int hc : space.head_choices)
          if (dim % hc == 0 && (g == 0 || dim_in % hc == 0)) heads.push_back(hc);
        if (heads.empty()) continue;
        grp.dim = dim;
        grp.heads = heads[static_cast<size_t>(rng.below(static_cast<int64_t>(heads.size())))];
        placed = true;
      }
      if (!placed) {
        ok = false;
        break;
      }

      if (g < ga_start) {
        grp.kind = AttentionKind::kMaskUnit;
        std::vector<int> units;
        for (int u : space.unit_choices)
          if (gh % u == 0 && gw % u == 0) units.push_back(u);
        if (units.empty()) {
          ok = false;
          break;
        }
        const int u = units[static_cast<size_t>(rng.below(static_cast<int64_t>(units.size())))];
        grp.unit_h = grp.unit_w = u;
      } else {
        grp.kind = AttentionKind::kGlobal;
      }

      h = gh;
      w = gw;
      dim_in = grp.dim;
      spec.groups.push_back(grp);
    }
    if (!ok) continue;

    ConvSpec stem;
    stem.in = 3;
    stem.out = spec.groups.front().dim;
    stem.kernel = space.stem_kernel;
    stem.stride = space.stem_stride;
    stem.padding = space.stem_padding;
    spec.stem = {stem};
    spec.head.dim = spec.groups.back().dim;
    spec.head.classes = space.classes;

    if (validate(spec).feasible) return spec;
  }
  throw ConfigError("design space unsatisfiable at resolution " + std::to_string(resolution));
}

// ---------------------------------------------------------------------------
// mutation
// ---------------------------------------------------------------------------

namespace {

// Keeps derived fields (stem width, head width) in sync after a dim change.
void sync_derived(ArchSpec& spec) {
  spec.stem.back().out = spec.groups.front().dim;
  spec.head.dim = spec.groups.back().dim;
}

}  // namespace

ArchSpec mutate(const ArchSpec& spec, const DesignSpace& space, int resolution, Rng& rng) {
  check_space(space);
  const int n = static_cast<int>(spec.groups.size());
  for (int attempt = 0; attempt < 512; ++attempt) {
    ArchSpec cand = spec;
    cand.input_resolution = resolution;
    const int move = static_cast<int>(rng.below(5));
    const int g = static_cast<int>(rng.below(n));
    BlockGroupSpec& grp = cand.groups[static_cast<size_t>(g)];
    switch (move) {
      case 0: {  // count +-1
        const int delta = rng.below(2) == 0 ? -1 : 1;
        const int next = grp.count + delta;
        if (next < space.min_count || next > space.max_count) continue;
        grp.count = next;
        break;
      }
      case 1: {  // dim to an adjacent grammar value
        const int idx = index_of(space.dim_choices, grp.dim);
        if (idx < 0) continue;
        const int j = idx + (rng.below(2) == 0 ? -1 : 1);
        if (j < 0 || j >= static_cast<int>(space.dim_choices.size())) continue;
        grp.dim = space.dim_choices[static_cast<size_t>(j)];
        sync_derived(cand);
        break;
      }
      case 2: {  // heads to an adjacent grammar value
        const int idx = index_of(space.head_choices, grp.heads);
        if (idx < 0) continue;
        const int j = idx + (rng.below(2) == 0 ? -1 : 1);
        if (j < 0 || j >= static_cast<int>(space.head_choices.size())) continue;
        grp.heads = space.head_choices[static_cast<size_t>(j)];
        break;
      }
      case 3: {  // relocate a q-pool site
        std::vector<int> from, to;
        for (int i = 0; i < n; ++i) {
          if (cand.groups[static_cast<size_t>(i)].pooled()) from.push_back(i);
          else if (i > 0) to.push_back(i);
        }
        if (from.empty() || to.empty()) continue;
        const int src = from[static_cast<size_t>(rng.below(static_cast<int64_t>(from.size())))];
        const int dst = to[static_cast<size_t>(rng.below(static_cast<int64_t>(to.size())))];
        auto& s = cand.groups[static_cast<size_t>(src)];
        auto& d = cand.groups[static_cast<size_t>(dst)];
        d.pool_h = s.pool_h;
        d.pool_w = s.pool_w;
        s.pool_h = s.pool_w = 1;
        break;
      }
      default: {  // mask unit resize
        if (grp.kind != AttentionKind::kMaskUnit) continue;
        const int idx = index_of(space.unit_choices, grp.unit_h);
        if (idx < 0 || grp.unit_h != grp.unit_w) continue;
        const int j = idx + (rng.below(2) == 0 ? -1 : 1);
        if (j < 0 || j >= static_cast<int>(space.unit_choices.size())) continue;
        grp.unit_h = grp.unit_w = space.unit_choices[static_cast<size_t>(j)];
        break;
      }
    }
    if (validate(cand).feasible) return cand;
  }
  throw ConfigError("mutate: no legal move found after 512 attempts");
}

// ---------------------------------------------------------------------------
// search loop
// ---------------------------------------------------------------------------

namespace {

struct Eval {
  int64_t params = 0;
  int64_t flops = 0;
  bool feasible = false;
  double u = 0.0;
};

}  // namespace

SearchResult search(const SearchProblem& problem) {
  if (problem.budget < 1) throw ConfigError("search: budget must be >= 1");
  if (problem.population < 1) throw ConfigError("search: population must be >= 1");
  if (problem.elite_frac <= 0.0 || problem.elite_frac > 1.0)
    throw ConfigError("search: elite_frac must be in (0, 1]");
  if (problem.perf.kappa <= 0.0 || problem.perf.beta <= 0.0 || problem.perf.gamma <= 0.0)
    throw ConfigError("search: performance exponents must be positive");

  Rng rng(problem.seed);
  const int resolution = problem.constraints.resolution;
  std::unordered_map<std::string, Eval> cache;

  SearchResult result;
  std::string best_hash;
  bool have_best = false;

  std::vector<ArchSpec> pop;
  std::vector<std::string> hashes;
  pop.reserve(static_cast<size_t>(problem.population));
  for (int i = 0; i < problem.population; ++i) {
    pop.push_back(sample_candidate(problem.space, resolution, rng));
    hashes.push_back(spec_hash(pop.back()));
  }

  int evals = 0, iteration = 0;
  while (evals < problem.budget) {
    // Evaluate this generation (one budget unit per candidate, cached or not).
    std::vector<Eval> gen(pop.size());
    for (size_t i = 0; i < pop.size() && evals < problem.budget; ++i) {
      auto it = cache.find(hashes[i]);
      if (it == cache.end()) {
        Eval e;
        IndicatorResult ind = indicator(pop[i], problem.constraints);
        e.params = ind.params;
        e.flops = ind.flops;
        e.feasible = ind.ok;
        e.u = problem.perf.score(hashes[i], e.params, e.flops);
        it = cache.emplace(hashes[i], e).first;
      }
      gen[i] = it->second;
      result.trace.push_back(
          {iteration, hashes[i], gen[i].params, gen[i].flops, gen[i].feasible, gen[i].u});
      ++evals;
      if (gen[i].feasible &&
          (!have_best || gen[i].u > result.best_u ||
           (gen[i].u == result.best_u && hashes[i] < best_hash))) {
        have_best = true;
        result.best_u = gen[i].u;
        best_hash = hashes[i];
        result.best_spec = pop[i];
      }
    }
    if (evals >= problem.budget) break;

    // Rank: feasible first, then by U, ties to the smaller hash.
    std::vector<size_t> order(pop.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (gen[a].feasible != gen[b].feasible) return gen[a].feasible;
      if (gen[a].u != gen[b].u) return gen[a].u > gen[b].u;
      return hashes[a] < hashes[b];
    });

    const int n_elite = std::max(
        1, static_cast<int>(std::lround(problem.elite_frac * problem.population)));
    std::vector<ArchSpec> next;
    std::vector<std::string> next_hashes;
    for (int i = 0; i < n_elite && i < static_cast<int>(order.size()); ++i) {
      next.push_back(pop[order[static_cast<size_t>(i)]]);
      next_hashes.push_back(hashes[order[static_cast<size_t>(i)]]);
    }
    int parent = 0;
    while (static_cast<int>(next.size()) < problem.population) {
      ArchSpec child = next[static_cast<size_t>(parent % n_elite)];
      for (int mv = 0; mv < problem.moves_per_candidate; ++mv)
        child = mutate(child, problem.space, resolution, rng);
      next_hashes.push_back(spec_hash(child));
      next.push_back(std::move(child));
      ++parent;
    }
    pop = std::move(next);
    hashes = std::move(next_hashes);
    ++iteration;
  }

  result.found = have_best;
  return result;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iteration,spec_hash,params,flops,feasible,U\n";
  char buf[64];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.u);
    os << r.iteration << "," << r.hash << "," << r.params << "," << r.flops << ","
       << (r.feasible ? 1 : 0) << "," << buf << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// config codec
// ---------------------------------------------------------------------------

SearchProblem problem_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("search config parse error: ") + e.what());
  }
  SearchProblem p;
  p.seed = j.value("seed", 0ull);
  p.budget = j.value("budget", 512);
  p.population = j.value("population", 32);
  p.elite_frac = j.value("elite_frac", 0.25);
  p.moves_per_candidate = j.value("moves_per_candidate", 1);

  if (j.contains("constraints")) {
    const auto& c = j.at("constraints");
    p.constraints.flop_budget = c.value("flop_budget", p.constraints.flop_budget);
    p.constraints.required_q_pool_sites =
        c.value("q_pool_sites", p.constraints.required_q_pool_sites);
    p.constraints.require_mua_and_ga =
        c.value("require_mua_and_ga", p.constraints.require_mua_and_ga);
    p.constraints.resolution = c.value("resolution", p.constraints.resolution);
  }
  if (j.contains("space")) {
    const auto& s = j.at("space");
    DesignSpace& d = p.space;
    if (s.contains("dims")) d.dim_choices = s.at("dims").get<std::vector<int>>();
    if (s.contains("heads")) d.head_choices = s.at("heads").get<std::vector<int>>();
    if (s.contains("units")) d.unit_choices = s.at("units").get<std::vector<int>>();
    if (s.contains("counts")) {
      d.min_count = s.at("counts")[0].get<int>();
      d.max_count = s.at("counts")[1].get<int>();
    }
    if (s.contains("groups")) {
      d.min_groups = s.at("groups")[0].get<int>();
      d.max_groups = s.at("groups")[1].get<int>();
    }
    if (s.contains("pools")) {
      d.min_pools = s.at("pools")[0].get<int>();
      d.max_pools = s.at("pools")[1].get<int>();
    }
    d.pool_side = s.value("pool_side", d.pool_side);
    if (s.contains("stem")) {
      const auto& st = s.at("stem");
      d.stem_kernel = st.value("kernel", d.stem_kernel);
      d.stem_stride = st.value("stride", d.stem_stride);
      d.stem_padding = st.value("padding", d.stem_padding);
    }
    d.mlp_ratio = s.value("mlp_ratio", d.mlp_ratio);
    d.classes = s.value("classes", d.classes);
  }
  if (j.contains("performance")) {
    const auto& f = j.at("performance");
    p.perf.kappa = f.value("kappa", p.perf.kappa);
    p.perf.beta = f.value("beta", p.perf.beta);
    p.perf.gamma = f.value("gamma", p.perf.gamma);
    p.perf.scale = f.value("scale", 1.0);
    if (f.contains("proxy")) {
      const auto& pr = f.at("proxy");
      if (pr.contains("table")) {
        p.perf.synthetic.reset();
        for (auto it = pr.at("table").begin(); it != pr.at("table").end(); ++it)
          p.perf.supplied[it.key()] = it.value().get<double>();
      } else if (pr.contains("synthetic")) {
        SyntheticSurrogate s;
        s.a_max = pr.at("synthetic").value("a_max", s.a_max);
        s.rate = pr.at("synthetic").value("rate", s.rate);
        p.perf.synthetic = s;
      }
    }
  }
  return p;
}

std::string problem_to_json(const SearchProblem& p) {
  json j;
  j["seed"] = p.seed;
  j["budget"] = p.budget;
  j["population"] = p.population;
  j["elite_frac"] = p.elite_frac;
  j["moves_per_candidate"] = p.moves_per_candidate;
  j["constraints"] = {{"flop_budget", p.constraints.flop_budget},
                      {"q_pool_sites", p.constraints.required_q_pool_sites},
                      {"require_mua_and_ga", p.constraints.require_mua_and_ga},
                      {"resolution", p.constraints.resolution}};
  j["space"] = {{"dims", p.space.dim_choices},
                {"heads", p.space.head_choices},
                {"units", p.space.unit_choices},
                {"counts", {p.space.min_count, p.space.max_count}},
                {"groups", {p.space.min_groups, p.space.max_groups}},
                {"pools", {p.space.min_pools, p.space.max_pools}},
                {"pool_side", p.space.pool_side},
                {"stem",
                 {{"kernel", p.space.stem_kernel},
                  {"stride", p.space.stem_stride},
                  {"padding", p.space.stem_padding}}},
                {"mlp_ratio", p.space.mlp_ratio},
                {"classes", p.space.classes}};
  json perf = {{"kappa", p.perf.kappa}, {"beta", p.perf.beta}, {"gamma", p.perf.gamma}};
  if (p.perf.scale != 1.0) perf["scale"] = p.perf.scale;
  if (!p.perf.supplied.empty()) {
    json table = json::object();
    for (const auto& [k, v] : p.perf.supplied) table[k] = v;
    perf["proxy"] = {{"table", table}};
  } else if (p.perf.synthetic) {
    perf["proxy"] = {
        {"synthetic", {{"a_max", p.perf.synthetic->a_max}, {"rate", p.perf.synthetic->rate}}}};
  }
  j["performance"] = perf;
  return j.dump(2) + "\n";
}

SearchProblem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open search config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return problem_from_json(buf.str());
}

}  // namespace turbovit
