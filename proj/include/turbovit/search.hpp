#pragma once

// Constrained architecture search: an iterative sample -> filter -> rank ->
// mutate loop over the spec grammar, maximizing a score U that trades
// accuracy against parameter and FLOP cost, subject to hard indicator
// constraints (FLOP budget, exact q-pool site count, presence of both
// attention patterns). Fully deterministic for a given seed; every evaluated
// candidate is recorded in the trace.

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "turbovit/arch.hpp"
#include "turbovit/tensor.hpp"

namespace turbovit {

struct SearchConstraints {
  int64_t flop_budget = 2'500'000'000;  // MACs at `resolution`
  int required_q_pool_sites = 3;
  bool require_mua_and_ga = true;
  int resolution = 224;
};

struct IndicatorResult {
  bool ok = false;
  std::vector<std::string> reasons;  // every violated clause
  int64_t params = 0;
  int64_t flops = 0;
};

// True iff the spec meets every constraint; reasons list each violation.
IndicatorResult indicator(const ArchSpec& spec, const SearchConstraints& constraints);

// Grammar bounds for the generator and the mutation moves.
struct DesignSpace {
  std::vector<int> dim_choices{32, 48, 64, 96, 128, 160, 192, 256, 320, 384, 512};
  std::vector<int> head_choices{1, 2, 4, 8};
  int min_groups = 3, max_groups = 6;
  int min_count = 1, max_count = 10;
  std::vector<int> unit_choices{1, 2, 4, 8};
  int pool_side = 2;
  int min_pools = 2, max_pools = 4;
  int stem_kernel = 7, stem_stride = 4, stem_padding = 3;
  int mlp_ratio = 4;
  int classes = 1000;
};

// Labeled synthetic stand-in for an accuracy evaluator: a saturating
// function of sqrt(params_M * flops_G). It exists to exercise the search
// machinery and predicts nothing.
struct SyntheticSurrogate {
  double a_max = 90.0;
  double rate = 0.5;
  double operator()(double params_m, double flops_g) const;
};

// U = scale * 20*log10(a^kappa / (p^beta * f^gamma)) with a the accuracy
// proxy in percent, p params in millions, f FLOPs in billions.
struct PerformanceFn {
  double kappa = 2.0, beta = 0.5, gamma = 0.5;
  double scale = 1.0;
  std::optional<SyntheticSurrogate> synthetic = SyntheticSurrogate{};
  std::unordered_map<std::string, double> supplied;  // spec hash -> accuracy %

  double accuracy(const std::string& hash, double params_m, double flops_g) const;
  double score(const std::string& hash, int64_t params, int64_t flops) const;
};

struct SearchProblem {
  SearchConstraints constraints;
  DesignSpace space;
  PerformanceFn perf;
  uint64_t seed = 0;
  int budget = 512;  // candidate evaluations
  int population = 32;
  double elite_frac = 0.25;
  int moves_per_candidate = 1;
};

struct TraceRow {
  int iteration = 0;
  std::string hash;
  int64_t params = 0;
  int64_t flops = 0;
  bool feasible = false;
  double u = 0.0;
};

struct SearchResult {
  bool found = false;  // false: no feasible candidate within budget
  ArchSpec best_spec;
  double best_u = 0.0;
  std::vector<TraceRow> trace;
};

// Draws a grammar-legal, shape-feasible spec. Throws ConfigError if the
// grammar bounds are unsatisfiable at the constraint resolution.
ArchSpec sample_candidate(const DesignSpace& space, int resolution, Rng& rng);

// Applies exactly one legal move: group count +-1, dim or heads to an
// adjacent grammar value, q-pool site relocation, or mask unit resize.
ArchSpec mutate(const ArchSpec& spec, const DesignSpace& space, int resolution, Rng& rng);

SearchResult search(const SearchProblem& problem);

std::string trace_csv(const std::vector<TraceRow>& trace);

// Search config file codec (JSON; see docs/file-formats.md).
SearchProblem problem_from_json(const std::string& text);
std::string problem_to_json(const SearchProblem& problem);
SearchProblem load_problem(const std::string& path);

}  // namespace turbovit
