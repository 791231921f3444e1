#pragma once

// Declarative architecture specification: the genome the search mutates and
// the blueprint the builder consumes. A spec is plain data; `validate` walks
// the token grid at the stated resolution and reports feasibility plus the
// structural facts the search constraints care about.

#include <string>
#include <utility>
#include <vector>

#include "turbovit/vit.hpp"

namespace turbovit {

// A group of `count` identical sequential blocks. The optional q_pool applies
// at the first block of the group; unit_h/unit_w describe the mask unit on the
// group's post-pool grid (the entry block partitions the incoming grid with
// unit * pool so its pooled output lands back on unit-sized tiles).
struct BlockGroupSpec {
  int count = 1;
  int dim = 0;
  int heads = 1;
  AttentionKind kind = AttentionKind::kGlobal;
  int unit_h = 0, unit_w = 0;
  int pool_h = 1, pool_w = 1;
  int mlp_ratio = 4;

  bool pooled() const { return pool_h > 1 || pool_w > 1; }
};

struct HeadSpec {
  int dim = 0;
  int classes = 1000;
};

struct ArchSpec {
  std::string name;
  std::string notes;
  int input_resolution = 224;
  std::vector<ConvSpec> stem;
  std::vector<BlockGroupSpec> groups;
  HeadSpec head;
};

struct ValidationReport {
  bool feasible = false;
  std::vector<std::string> failures;

  // Structural facts, independent of feasibility.
  int q_pool_sites = 0;
  bool has_mask_unit = false;
  bool has_global = false;
  bool mua_before_ga = true;   // every mask-unit group precedes every global group
  bool transitions_legal = true;

  // Token grid after the stem and after each group.
  std::vector<std::pair<int, int>> grid_trace;

  std::string summary() const;
};

// Never throws on content: problems land in `failures`.
ValidationReport validate(const ArchSpec& spec);

// Token grid produced by the stem at the spec resolution.
std::pair<int, int> stem_grid(const ArchSpec& spec);

// Per-block view of a spec, ready for vit_block / the builder / the counters.
struct LoweredBlock {
  BlockConfig cfg;
  int grid_h = 0, grid_w = 0;  // incoming grid
  int group = 0, index = 0;
  std::string name;            // "g2.b0"
};

// Throws ConfigError (naming the first failure) if the spec is infeasible.
std::vector<LoweredBlock> lower(const ArchSpec& spec);

// JSON codec. The JSON schema is documented in docs/file-formats.md; loading a
// saved spec reproduces the struct exactly.
std::string arch_to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const std::string& text);
ArchSpec load_arch(const std::string& path);
void save_arch(const ArchSpec& spec, const std::string& path);

// Stable content hash of the structural fields (name/notes excluded);
// 16 hex digits, used for search tie-breaking, traces and proxy tables.
std::string spec_hash(const ArchSpec& spec);

}  // namespace turbovit
