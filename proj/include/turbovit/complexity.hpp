#pragma once

// Closed-form parameter and FLOP accounting for an ArchSpec. Counts are exact
// integers and, under the default options, agree exactly with (a) the number
// of scalars the builder allocates and (b) a MAC-instrumented naive forward
// pass at batch 1.
//
// Convention: 1 MAC = 1 FLOP, counting matmul/conv multiply-accumulates only.
// `flops_per_mac = 2` doubles the MAC-derived counts for comparison against
// conventions that count multiplies and adds separately. Normalization and
// nonlinearity costs (sub-percent contributors) are excluded unless
// `include_norm_act` is set, which adds documented per-element estimates:
// 5 ops/element for layer norm, 4 per attention logit for softmax, 10 per
// element for GELU.

#include <string>
#include <vector>

#include "turbovit/arch.hpp"

namespace turbovit {

struct CountingOptions {
  int flops_per_mac = 1;
  bool include_norm_act = false;
};

struct LayerCost {
  std::string name;
  std::string kind;
  int64_t params = 0;
  int64_t flops = 0;
};

struct ComplexityReport {
  std::string model_name;
  int resolution = 0;
  std::string convention;
  std::vector<LayerCost> rows;
  int64_t total_params = 0;
  int64_t total_flops = 0;
};

// Throws ConfigError if the spec is infeasible at `resolution`.
ComplexityReport analyze(const ArchSpec& spec, int resolution, const CountingOptions& opts = {});

ComplexityReport count_params(const ArchSpec& spec);
ComplexityReport count_flops(const ArchSpec& spec, int resolution);

std::string render_text(const ComplexityReport& report);
std::string render_csv(const ComplexityReport& report);

}  // namespace turbovit
