// Python bindings: specs travel as JSON strings, tensors as numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "turbovit/bench.hpp"
#include "turbovit/complexity.hpp"
#include "turbovit/model.hpp"
#include "turbovit/search.hpp"
#include "turbovit/train.hpp"

namespace py = pybind11;
using namespace turbovit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

TensorF tensor_from_numpy(const FloatArray& array) {
  Shape shape;
  for (py::ssize_t i = 0; i < array.ndim(); ++i)
    shape.push_back(static_cast<int>(array.shape(i)));
  TensorF t(shape);
  std::copy(array.data(), array.data() + t.numel(), t.ptr());
  return t;
}

py::array_t<float> numpy_from_tensor(const TensorF& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

py::dict validation_to_dict(const ValidationReport& r) {
  py::dict d;
  d["feasible"] = r.feasible;
  d["failures"] = r.failures;
  d["q_pool_sites"] = r.q_pool_sites;
  d["has_mask_unit"] = r.has_mask_unit;
  d["has_global"] = r.has_global;
  d["mua_before_ga"] = r.mua_before_ga;
  py::list grid;
  for (const auto& [h, w] : r.grid_trace) grid.append(py::make_tuple(h, w));
  d["grid_trace"] = grid;
  return d;
}

class PyModel {
public:
  PyModel(const std::string& spec_json, uint64_t seed)
      : model_(build<float>(arch_from_json(spec_json), seed)) {}

  py::array_t<float> forward_numpy(const FloatArray& images) {
    TensorF input = tensor_from_numpy(images);
    return numpy_from_tensor(forward(model_, input));
  }

  int64_t parameter_count() const { return model_.parameter_count(); }
  std::string spec_json() const { return arch_to_json(model_.spec); }

  const Model<float>& model() const { return model_; }

private:
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "turbovit: hierarchical vision transformer kernels, complexity analysis, "
            "constrained architecture search and benchmarking";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("set_num_threads", &ops::set_num_threads, py::arg("n"),
        "Worker threads for matmul/conv kernels (results are bitwise identical).");
  m.def("num_threads", &ops::num_threads);

  m.def("spec_hash",
        [](const std::string& spec_json) { return spec_hash(arch_from_json(spec_json)); },
        py::arg("spec_json"), "Stable 16-hex content hash of a spec (annotations excluded).");

  m.def("validate_spec",
        [](const std::string& spec_json) { return validation_to_dict(validate(arch_from_json(spec_json))); },
        py::arg("spec_json"));

  m.def("analyze_spec",
        [](const std::string& spec_json, int resolution, int flops_per_mac, bool include_norm_act) {
          ArchSpec spec = arch_from_json(spec_json);
          CountingOptions opts;
          opts.flops_per_mac = flops_per_mac;
          opts.include_norm_act = include_norm_act;
          ComplexityReport rep =
              analyze(spec, resolution > 0 ? resolution : spec.input_resolution, opts);
          py::dict d;
          d["params"] = rep.total_params;
          d["flops"] = rep.total_flops;
          d["resolution"] = rep.resolution;
          d["convention"] = rep.convention;
          py::list rows;
          for (const LayerCost& r : rep.rows)
            rows.append(py::make_tuple(r.name, r.kind, r.params, r.flops));
          d["rows"] = rows;
          return d;
        },
        py::arg("spec_json"), py::arg("resolution") = 0, py::arg("flops_per_mac") = 1,
        py::arg("include_norm_act") = false);

  m.def("indicator",
        [](const std::string& spec_json, int64_t flop_budget, int q_pool_sites, bool require_both,
           int resolution) {
          SearchConstraints c;
          c.flop_budget = flop_budget;
          c.required_q_pool_sites = q_pool_sites;
          c.require_mua_and_ga = require_both;
          c.resolution = resolution;
          IndicatorResult r = indicator(arch_from_json(spec_json), c);
          py::dict d;
          d["ok"] = r.ok;
          d["reasons"] = r.reasons;
          d["params"] = r.params;
          d["flops"] = r.flops;
          return d;
        },
        py::arg("spec_json"), py::arg("flop_budget") = 2'500'000'000LL,
        py::arg("q_pool_sites") = 3, py::arg("require_both") = true, py::arg("resolution") = 224);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, uint64_t>(), py::arg("spec_json"), py::arg("seed") = 0)
      .def("forward", &PyModel::forward_numpy, py::arg("images"),
           "images: float32 [B, 3, R, R]; returns logits [B, classes].")
      .def("parameter_count", &PyModel::parameter_count)
      .def("spec_json", &PyModel::spec_json);

  m.def("search",
        [](const std::string& config_json) {
          SearchResult r = search(problem_from_json(config_json));
          py::dict d;
          d["found"] = r.found;
          d["best_u"] = r.best_u;
          d["best_spec_json"] = r.found ? arch_to_json(r.best_spec) : std::string();
          d["trace_csv"] = trace_csv(r.trace);
          d["evaluations"] = r.trace.size();
          return d;
        },
        py::arg("config_json"));

  m.def("run_bench",
        [](const std::string& spec_json, int batch_size, int n_runs, int warmup_runs,
           uint64_t seed) {
          Model<float> model = build<float>(arch_from_json(spec_json), seed);
          BenchReport rep = run_bench(model, batch_size, n_runs, warmup_runs, seed);
          py::dict d;
          d["model"] = rep.model_name;
          d["hardware"] = rep.hardware;
          d["batch_size"] = rep.batch_size;
          d["n_runs"] = rep.n_runs;
          d["warmup_runs"] = rep.warmup_runs;
          d["threads"] = rep.threads;
          d["samples_ms"] = rep.samples_ms;
          d["mean_ms"] = rep.mean_ms;
          d["median_ms"] = rep.median_ms;
          d["p95_ms"] = rep.p95_ms;
          d["throughput"] = rep.throughput;
          return d;
        },
        py::arg("spec_json"), py::arg("batch_size") = 1, py::arg("n_runs") = 1000,
        py::arg("warmup_runs") = 10, py::arg("seed") = 0);

  m.def("sanity_fit",
        [](const std::string& spec_json, int steps, double lr, uint64_t seed) {
          ArchSpec spec = arch_from_json(spec_json);
          ToyTask task;
          task.classes = spec.head.classes;
          task.resolution = spec.input_resolution;
          task.seed = seed;
          FitOptions opts;
          opts.steps = steps;
          opts.lr = static_cast<float>(lr);
          opts.seed = seed;
          FitResult r = fit(spec, task, opts);
          py::dict d;
          d["losses"] = r.losses;
          d["eval_accuracy"] = r.eval_accuracy;
          d["diverged"] = r.diverged;
          d["diverged_step"] = r.diverged_step;
          return d;
        },
        py::arg("spec_json"), py::arg("steps") = 200, py::arg("lr") = 0.01,
        py::arg("seed") = 0);

  // A couple of raw kernels, mostly for smoke tests and quick experiments.
  m.def("matmul",
        [](const FloatArray& a, const FloatArray& b) {
          return numpy_from_tensor(ops::matmul(tensor_from_numpy(a), tensor_from_numpy(b)));
        },
        py::arg("a"), py::arg("b"));
  m.def("softmax_lastdim",
        [](const FloatArray& x) {
          return numpy_from_tensor(ops::softmax_lastdim(tensor_from_numpy(x)));
        },
        py::arg("x"));

  m.attr("__version__") = "0.1.0";
}
