#include "turbovit/complexity.hpp"

#include <iomanip>
#include <sstream>

namespace turbovit {

namespace {

int64_t linear_params(int64_t in, int64_t out) { return in * out + out; }

}  // namespace

ComplexityReport analyze(const ArchSpec& spec, int resolution, const CountingOptions& opts) {
  ArchSpec at_res = spec;
  at_res.input_resolution = resolution;
  const std::vector<LoweredBlock> layout = lower(at_res);  // throws if infeasible

  ComplexityReport rep;
  rep.model_name = spec.name.empty() ? "unnamed" : spec.name;
  rep.resolution = resolution;
  rep.convention = opts.flops_per_mac == 1 ? "1 MAC = 1 FLOP" : "2 FLOPs per MAC";
  if (opts.include_norm_act) rep.convention += ", norm/act included";
  const int64_t fpm = opts.flops_per_mac;

  // Stem convs.
  int h = resolution, w = resolution;
  for (size_t i = 0; i < at_res.stem.size(); ++i) {
    const ConvSpec& c = at_res.stem[i];
    h = ops::conv_out_size(h, c.kernel, c.stride, c.padding);
    w = ops::conv_out_size(w, c.kernel, c.stride, c.padding);
    LayerCost row;
    row.name = "stem.conv" + std::to_string(i);
    row.kind = "conv";
    row.params = static_cast<int64_t>(c.out) * c.in * c.kernel * c.kernel + c.out;
    row.flops = fpm * static_cast<int64_t>(c.out) * c.in * c.kernel * c.kernel * h * w;
    rep.rows.push_back(row);
  }
  {
    LayerCost row;
    row.name = "stem.pos";
    row.kind = "embedding";
    row.params = static_cast<int64_t>(h) * w * at_res.stem.back().out;
    rep.rows.push_back(row);
  }

  // Blocks.
  for (const LoweredBlock& lb : layout) {
    const int64_t din = lb.cfg.dim, dout = lb.cfg.out_dim, hid = lb.cfg.mlp_hidden();
    const int64_t t_in = static_cast<int64_t>(lb.grid_h) * lb.grid_w;
    const int64_t pool = static_cast<int64_t>(lb.cfg.pool_h) * lb.cfg.pool_w;
    const int64_t tq = t_in / pool;
    const bool mua = lb.cfg.kind == AttentionKind::kMaskUnit;
    const int64_t unit = mua ? static_cast<int64_t>(lb.cfg.unit_h) * lb.cfg.unit_w : t_in;

    LayerCost row;
    row.name = lb.name;
    row.kind = mua ? "mask_unit block" : "global block";
    row.params = 2 * din                         // ln1
                 + 3 * (din * din + din)         // qkv
                 + linear_params(din, dout)      // out projection
                 + 2 * dout                      // ln2
                 + linear_params(dout, hid)      // mlp fc1
                 + linear_params(hid, dout);     // mlp fc2
    if (lb.cfg.transition()) row.params += linear_params(din, dout);

    int64_t macs = t_in * din * 3 * din          // qkv
                   + 2 * tq * unit * din         // scores + weighted sum
                   + tq * din * dout             // out projection
                   + tq * dout * hid             // mlp fc1
                   + tq * hid * dout;            // mlp fc2
    if (lb.cfg.transition()) macs += tq * din * dout;
    row.flops = fpm * macs;

    if (opts.include_norm_act) {
      const int64_t logits = static_cast<int64_t>(lb.cfg.heads) * tq * unit;
      row.flops += 5 * t_in * din    // ln1
                   + 4 * logits      // softmax
                   + 5 * tq * dout   // ln2
                   + 10 * tq * hid;  // gelu
    }
    rep.rows.push_back(row);
  }

  // Classifier head.
  {
    LayerCost norm;
    norm.name = "head.norm";
    norm.kind = "layer_norm";
    norm.params = 2 * static_cast<int64_t>(at_res.head.dim);
    if (opts.include_norm_act) norm.flops = 5 * static_cast<int64_t>(at_res.head.dim);
    rep.rows.push_back(norm);

    LayerCost fc;
    fc.name = "head.fc";
    fc.kind = "linear";
    fc.params = linear_params(at_res.head.dim, at_res.head.classes);
    fc.flops = fpm * static_cast<int64_t>(at_res.head.dim) * at_res.head.classes;
    rep.rows.push_back(fc);
  }

  for (const LayerCost& row : rep.rows) {
    rep.total_params += row.params;
    rep.total_flops += row.flops;
  }
  return rep;
}

ComplexityReport count_params(const ArchSpec& spec) {
  return analyze(spec, spec.input_resolution);
}

ComplexityReport count_flops(const ArchSpec& spec, int resolution) {
  return analyze(spec, resolution);
}

std::string render_text(const ComplexityReport& rep) {
  size_t name_w = 5;
  for (const LayerCost& r : rep.rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << "model: " << rep.model_name << "  resolution: " << rep.resolution << "x" << rep.resolution
     << "  convention: " << rep.convention << "\n";
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer" << std::setw(18) << "kind"
     << std::right << std::setw(14) << "params" << std::setw(16) << "flops" << "\n";
  for (const LayerCost& r : rep.rows)
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::setw(18) << r.kind
       << std::right << std::setw(14) << r.params << std::setw(16) << r.flops << "\n";
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "TOTAL" << std::setw(18) << ""
     << std::right << std::setw(14) << rep.total_params << std::setw(16) << rep.total_flops << "\n";
  os << "totals: " << std::fixed << std::setprecision(3) << rep.total_params / 1e6 << " M params, "
     << rep.total_flops / 1e9 << " G flops\n";
  return os.str();
}

std::string render_csv(const ComplexityReport& rep) {
  std::ostringstream os;
  os << "layer,kind,params,flops\n";
  for (const LayerCost& r : rep.rows)
    os << r.name << "," << r.kind << "," << r.params << "," << r.flops << "\n";
  os << "TOTAL,," << rep.total_params << "," << rep.total_flops << "\n";
  return os.str();
}

}  // namespace turbovit
