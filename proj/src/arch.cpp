#include "turbovit/arch.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace turbovit {

using nlohmann::json;

std::pair<int, int> stem_grid(const ArchSpec& spec) {
  int h = spec.input_resolution, w = spec.input_resolution;
  for (const ConvSpec& c : spec.stem) {
    h = ops::conv_out_size(h, c.kernel, c.stride, c.padding);
    w = ops::conv_out_size(w, c.kernel, c.stride, c.padding);
  }
  return {h, w};
}

ValidationReport validate(const ArchSpec& spec) {
  ValidationReport r;
  auto fail = [&r](const std::string& msg) { r.failures.push_back(msg); };

  if (spec.input_resolution < 1) fail("input_resolution must be positive");
  if (spec.stem.empty()) fail("stem must contain at least one conv layer");
  if (spec.groups.empty()) fail("groups must not be empty");

  // Stem chain: channel continuity and positive output grids.
  int h = spec.input_resolution, w = spec.input_resolution;
  int channels = 3;
  for (size_t i = 0; i < spec.stem.size(); ++i) {
    const ConvSpec& c = spec.stem[i];
    const std::string at = "stem[" + std::to_string(i) + "]";
    if (c.in != channels)
      fail(at + ".in is " + std::to_string(c.in) + ", expected " + std::to_string(channels));
    if (c.out < 1) fail(at + ".out must be positive");
    if (c.kernel < 1 || c.stride < 1 || c.padding < 0) fail(at + " has invalid geometry");
    if (c.kernel >= 1 && c.stride >= 1) {
      h = ops::conv_out_size(h, c.kernel, c.stride, c.padding);
      w = ops::conv_out_size(w, c.kernel, c.stride, c.padding);
      if (h < 1 || w < 1) fail(at + " produces a non-positive token grid");
    }
    channels = c.out;
  }
  if (h < 1 || w < 1) {
    r.feasible = false;
    return r;
  }
  r.grid_trace.emplace_back(h, w);

  bool seen_global = false;
  int dim_in = channels;
  for (size_t g = 0; g < spec.groups.size(); ++g) {
    const BlockGroupSpec& grp = spec.groups[g];
    const std::string at = "groups[" + std::to_string(g) + "]";
    if (grp.count < 1) fail(at + ".count must be >= 1");
    if (grp.dim < 1) fail(at + ".dim must be positive");
    if (grp.heads < 1) fail(at + ".heads must be positive");
    if (grp.mlp_ratio < 1) fail(at + ".mlp_ratio must be >= 1");
    if (grp.dim >= 1 && grp.heads >= 1 && grp.dim % grp.heads != 0)
      fail(at + ".heads does not divide dim");
    // The entry block runs attention at the incoming width.
    if (grp.heads >= 1 && dim_in >= 1 && dim_in % grp.heads != 0) {
      fail(at + ".heads does not divide incoming dim " + std::to_string(dim_in));
      r.transitions_legal = false;
    }

    if (grp.pooled()) {
      ++r.q_pool_sites;
      if (grp.pool_h < 1 || grp.pool_w < 1 || h % grp.pool_h != 0 || w % grp.pool_w != 0)
        fail(at + ".q_pool " + std::to_string(grp.pool_h) + "x" + std::to_string(grp.pool_w) +
             " does not divide token grid " + std::to_string(h) + "x" + std::to_string(w));
    }
    const int gh = (h % grp.pool_h == 0) ? h / grp.pool_h : h;
    const int gw = (w % grp.pool_w == 0) ? w / grp.pool_w : w;

    if (grp.kind == AttentionKind::kMaskUnit) {
      r.has_mask_unit = true;
      if (seen_global) r.mua_before_ga = false;
      if (grp.unit_h < 1 || grp.unit_w < 1)
        fail(at + ".unit must be set for mask_unit groups");
      else if (gh % grp.unit_h != 0 || gw % grp.unit_w != 0)
        fail(at + ".unit " + std::to_string(grp.unit_h) + "x" + std::to_string(grp.unit_w) +
             " does not divide token grid " + std::to_string(gh) + "x" + std::to_string(gw));
    } else {
      r.has_global = true;
      seen_global = true;
    }

    h = gh;
    w = gw;
    r.grid_trace.emplace_back(h, w);
    dim_in = grp.dim;
  }

  if (spec.head.dim != dim_in)
    fail("head.dim is " + std::to_string(spec.head.dim) + ", expected final group dim " +
         std::to_string(dim_in));
  if (spec.head.classes < 1) fail("head.classes must be positive");

  r.feasible = r.failures.empty();
  return r;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << (feasible ? "feasible" : "infeasible") << "; q_pool_sites=" << q_pool_sites
     << "; mask_unit=" << (has_mask_unit ? "yes" : "no")
     << "; global=" << (has_global ? "yes" : "no")
     << "; mua_before_ga=" << (mua_before_ga ? "yes" : "no");
  if (!grid_trace.empty()) {
    os << "; grid ";
    for (size_t i = 0; i < grid_trace.size(); ++i)
      os << (i ? " -> " : "") << grid_trace[i].first << "x" << grid_trace[i].second;
  }
  for (const std::string& f : failures) os << "\n  ! " << f;
  return os.str();
}

std::vector<LoweredBlock> lower(const ArchSpec& spec) {
  ValidationReport r = validate(spec);
  if (!r.feasible)
    throw ConfigError("infeasible spec: " + (r.failures.empty() ? "unknown" : r.failures.front()));

  std::vector<LoweredBlock> out;
  auto [h, w] = stem_grid(spec);
  int dim_in = spec.stem.back().out;
  for (size_t g = 0; g < spec.groups.size(); ++g) {
    const BlockGroupSpec& grp = spec.groups[g];
    for (int b = 0; b < grp.count; ++b) {
      const bool entry = b == 0;
      LoweredBlock lb;
      lb.group = static_cast<int>(g);
      lb.index = b;
      lb.name = "g" + std::to_string(g) + ".b" + std::to_string(b);
      lb.grid_h = h;
      lb.grid_w = w;
      lb.cfg.dim = entry ? dim_in : grp.dim;
      lb.cfg.out_dim = grp.dim;
      lb.cfg.heads = grp.heads;
      lb.cfg.kind = grp.kind;
      lb.cfg.pool_h = entry ? grp.pool_h : 1;
      lb.cfg.pool_w = entry ? grp.pool_w : 1;
      lb.cfg.mlp_ratio = grp.mlp_ratio;
      if (grp.kind == AttentionKind::kMaskUnit) {
        lb.cfg.unit_h = entry ? grp.unit_h * grp.pool_h : grp.unit_h;
        lb.cfg.unit_w = entry ? grp.unit_w * grp.pool_w : grp.unit_w;
      }
      if (entry) {
        h /= grp.pool_h;
        w /= grp.pool_w;
      }
      out.push_back(std::move(lb));
    }
    dim_in = grp.dim;
  }
  return out;
}

// --------------------------------------------------------------------------
// JSON codec
// --------------------------------------------------------------------------

namespace {

json group_to_json(const BlockGroupSpec& g) {
  json j;
  j["count"] = g.count;
  j["dim"] = g.dim;
  j["heads"] = g.heads;
  j["kind"] = kind_name(g.kind);
  if (g.kind == AttentionKind::kMaskUnit) j["unit"] = {g.unit_h, g.unit_w};
  if (g.pooled()) j["q_pool"] = {g.pool_h, g.pool_w};
  if (g.mlp_ratio != 4) j["mlp_ratio"] = g.mlp_ratio;
  return j;
}

BlockGroupSpec group_from_json(const json& j, size_t idx) {
  const std::string at = "groups[" + std::to_string(idx) + "]";
  BlockGroupSpec g;
  g.count = j.value("count", 1);
  if (!j.contains("dim")) throw ConfigError(at + ".dim is required");
  g.dim = j.at("dim").get<int>();
  g.heads = j.value("heads", 1);
  const std::string kind = j.value("kind", "global");
  if (kind == "global") {
    g.kind = AttentionKind::kGlobal;
  } else if (kind == "mask_unit") {
    g.kind = AttentionKind::kMaskUnit;
    if (!j.contains("unit")) throw ConfigError(at + ".unit is required for mask_unit groups");
  } else {
    throw ConfigError(at + ".kind must be \"global\" or \"mask_unit\", got \"" + kind + "\"");
  }
  if (j.contains("unit")) {
    const auto& u = j.at("unit");
    if (!u.is_array() || u.size() != 2) throw ConfigError(at + ".unit must be [h, w]");
    g.unit_h = u[0].get<int>();
    g.unit_w = u[1].get<int>();
  }
  if (j.contains("q_pool")) {
    const auto& p = j.at("q_pool");
    if (!p.is_array() || p.size() != 2) throw ConfigError(at + ".q_pool must be [ph, pw]");
    g.pool_h = p[0].get<int>();
    g.pool_w = p[1].get<int>();
  }
  g.mlp_ratio = j.value("mlp_ratio", 4);
  return g;
}

}  // namespace

std::string arch_to_json(const ArchSpec& spec) {
  json j;
  if (!spec.name.empty()) j["name"] = spec.name;
  if (!spec.notes.empty()) j["notes"] = spec.notes;
  j["input_resolution"] = spec.input_resolution;
  j["stem"] = json::array();
  for (const ConvSpec& c : spec.stem)
    j["stem"].push_back({{"in", c.in},
                         {"out", c.out},
                         {"kernel", c.kernel},
                         {"stride", c.stride},
                         {"padding", c.padding}});
  j["groups"] = json::array();
  for (const BlockGroupSpec& g : spec.groups) j["groups"].push_back(group_to_json(g));
  j["head"] = {{"dim", spec.head.dim}, {"classes", spec.head.classes}};
  return j.dump(2) + "\n";
}

ArchSpec arch_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("spec parse error: ") + e.what());
  }
  ArchSpec spec;
  spec.name = j.value("name", "");
  spec.notes = j.value("notes", "");
  spec.input_resolution = j.value("input_resolution", 224);
  if (!j.contains("stem") || !j.at("stem").is_array())
    throw ConfigError("stem[] is required");
  for (const auto& c : j.at("stem")) {
    ConvSpec cs;
    cs.in = c.value("in", 3);
    if (!c.contains("out")) throw ConfigError("stem[].out is required");
    cs.out = c.at("out").get<int>();
    cs.kernel = c.value("kernel", 7);
    cs.stride = c.value("stride", 4);
    cs.padding = c.value("padding", 3);
    spec.stem.push_back(cs);
  }
  if (!j.contains("groups") || !j.at("groups").is_array())
    throw ConfigError("groups[] is required");
  size_t i = 0;
  for (const auto& g : j.at("groups")) spec.groups.push_back(group_from_json(g, i++));
  if (!j.contains("head")) throw ConfigError("head{} is required");
  spec.head.dim = j.at("head").value("dim", 0);
  spec.head.classes = j.at("head").value("classes", 1000);
  return spec;
}

ArchSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return arch_from_json(buf.str());
}

void save_arch(const ArchSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write spec file: " + path);
  out << arch_to_json(spec);
}

std::string spec_hash(const ArchSpec& spec) {
  ArchSpec bare = spec;
  bare.name.clear();
  bare.notes.clear();
  const std::string text = arch_to_json(bare);
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace turbovit
