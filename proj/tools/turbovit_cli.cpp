// Command-line entry point: analyze | validate | search | bench | infer |
// sanity-train. Exit codes: 0 success, 1 constraint/validation failure,
// 2 input/parse error, 3 search infeasible within budget.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "turbovit/bench.hpp"
#include "turbovit/complexity.hpp"
#include "turbovit/io.hpp"
#include "turbovit/model.hpp"
#include "turbovit/search.hpp"
#include "turbovit/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConstraint = 1;
constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    turbovit::write_text_file(out_path, text);
  }
}

int cmd_analyze(const std::string& spec_path, int resolution, const std::string& format,
                const std::string& out_path, int flops_per_mac, bool include_norm_act) {
  turbovit::ArchSpec spec = turbovit::load_arch(spec_path);
  const int res = resolution > 0 ? resolution : spec.input_resolution;
  turbovit::ValidationReport vr = turbovit::validate(spec);
  if (!vr.feasible) {
    for (const std::string& f : vr.failures) std::cerr << "error: " << f << "\n";
    return kExitInput;
  }
  turbovit::CountingOptions opts;
  opts.flops_per_mac = flops_per_mac;
  opts.include_norm_act = include_norm_act;
  turbovit::ComplexityReport rep = turbovit::analyze(spec, res, opts);
  emit(format == "csv" ? turbovit::render_csv(rep) : turbovit::render_text(rep), out_path);
  return kExitOk;
}

int cmd_validate(const std::string& spec_path, const turbovit::SearchConstraints& constraints) {
  turbovit::ArchSpec spec = turbovit::load_arch(spec_path);
  turbovit::ValidationReport vr = turbovit::validate(spec);
  std::cout << vr.summary() << "\n";
  if (!vr.feasible) return kExitConstraint;
  turbovit::IndicatorResult ind = turbovit::indicator(spec, constraints);
  std::cout << "params: " << ind.params << "  flops: " << ind.flops << "\n";
  if (!ind.ok) {
    for (const std::string& r : ind.reasons) std::cout << "reason: " << r << "\n";
    std::cout << "constraints: FAIL\n";
    return kExitConstraint;
  }
  std::cout << "constraints: PASS\n";
  return kExitOk;
}

int cmd_search(const std::string& config_path, const std::string& out_spec,
               const std::string& out_trace, std::optional<uint64_t> seed) {
  turbovit::SearchProblem problem = turbovit::load_problem(config_path);
  if (seed) problem.seed = *seed;
  turbovit::SearchResult result = turbovit::search(problem);
  turbovit::write_text_file(out_trace, turbovit::trace_csv(result.trace));
  std::cout << "evaluations: " << result.trace.size() << "\n";
  if (!result.found) {
    std::cout << "infeasible within budget (trace written to " << out_trace << ")\n";
    return kExitInfeasible;
  }
  result.best_spec.name = "searched";
  turbovit::save_arch(result.best_spec, out_spec);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", result.best_u);
  std::cout << "best U: " << buf << "\n"
            << "best spec hash: " << turbovit::spec_hash(result.best_spec) << "\n"
            << "best spec written to " << out_spec << "\n"
            << "trace written to " << out_trace << "\n";
  return kExitOk;
}

int cmd_bench(const std::string& spec_path, int batch, int runs, int warmup, uint64_t seed,
              const std::string& format, const std::string& out_path,
              const std::string& samples_path, bool use_median) {
  turbovit::ArchSpec spec = turbovit::load_arch(spec_path);
  turbovit::Model<float> model = turbovit::build<float>(spec, seed);
  turbovit::BenchReport rep = turbovit::run_bench(model, batch, runs, warmup, seed);
  emit(format == "csv" ? turbovit::bench_csv({rep}) : turbovit::bench_table({rep}, use_median),
       out_path);
  if (!samples_path.empty()) turbovit::write_text_file(samples_path, turbovit::bench_samples(rep));
  return kExitOk;
}

int cmd_infer(const std::string& spec_path, uint64_t seed, const std::string& input_path,
              int topk) {
  turbovit::ArchSpec spec = turbovit::load_arch(spec_path);
  turbovit::Model<float> model = turbovit::build<float>(spec, seed);
  const int r = spec.input_resolution;
  turbovit::TensorF input;
  if (input_path.empty()) {
    input = turbovit::TensorF({1, 3, r, r});
    turbovit::Rng rng(seed + 1);
    rng.fill_uniform(input, -1.0, 1.0);
  } else {
    input = turbovit::read_raw_tensor(input_path);
    if (input.ndim() != 4 || input.size(1) != 3 || input.size(2) != r || input.size(3) != r)
      throw turbovit::ConfigError("input tensor " + turbovit::shape_str(input.shape) +
                                  " does not match expected shape [B 3 " + std::to_string(r) +
                                  " " + std::to_string(r) + "]");
  }
  turbovit::TensorF logits = turbovit::forward(model, input);
  const int classes = logits.size(1);
  const int k = std::min(topk, classes);
  for (int b = 0; b < logits.size(0); ++b) {
    std::vector<int> order(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) order[static_cast<size_t>(c)] = c;
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](int x, int y) { return logits(b, x) > logits(b, y); });
    std::cout << "image " << b << " top-" << k << ":";
    char buf[64];
    for (int i = 0; i < k; ++i) {
      std::snprintf(buf, sizeof(buf), " %d:%.5f", order[static_cast<size_t>(i)],
                    logits(b, order[static_cast<size_t>(i)]));
      std::cout << buf;
    }
    std::cout << "\n";
  }
  return kExitOk;
}

int cmd_sanity_train(const std::string& spec_path, int steps, double lr, uint64_t seed,
                     const std::string& out_path) {
  turbovit::ArchSpec spec = turbovit::load_arch(spec_path);
  turbovit::ToyTask task;
  task.classes = spec.head.classes;
  task.resolution = spec.input_resolution;
  task.seed = seed;
  turbovit::FitOptions opts;
  opts.steps = steps;
  opts.lr = static_cast<float>(lr);
  opts.seed = seed;
  turbovit::FitResult result = turbovit::fit(spec, task, opts);
  emit(turbovit::loss_curve_csv(result), out_path);
  char buf[128];
  if (result.diverged) {
    std::snprintf(buf, sizeof(buf), "diverged at step %d\n", result.diverged_step);
    std::cerr << buf;
    return kExitConstraint;
  }
  std::snprintf(buf, sizeof(buf), "initial loss %.4f, final loss %.4f, eval accuracy %.3f\n",
                result.losses.front(), result.losses.back(), result.eval_accuracy);
  std::cerr << buf;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"turbovit: hierarchical vision transformer toolkit"};
  app.set_version_flag("--version", "turbovit 0.1.0");
  app.require_subcommand(1);
  app.fallthrough();  // lets --threads appear after the subcommand too

  int threads = 1;
  app.add_option("--threads", threads, "worker threads for matmul/conv (default 1)");

  std::string spec_path, out_path, format = "text";

  auto* analyze = app.add_subcommand("analyze", "parameter/FLOP breakdown of a spec");
  int resolution = 0, flops_per_mac = 1;
  bool include_norm_act = false;
  analyze->add_option("--spec", spec_path, "architecture spec file")->required();
  analyze->add_option("--resolution", resolution, "input resolution (default: from the spec)");
  analyze->add_option("--format", format, "text|csv")->check(CLI::IsMember({"text", "csv"}));
  analyze->add_option("--out", out_path, "write the report here instead of stdout");
  analyze->add_option("--flops-per-mac", flops_per_mac, "1 (default) or 2")
      ->check(CLI::IsMember({1, 2}));
  analyze->add_flag("--include-norm-act", include_norm_act,
                    "add normalization/activation op estimates");

  auto* validate_cmd = app.add_subcommand("validate", "feasibility + design constraint check");
  double flop_budget = 2.5e9;
  int q_pool_sites = 3, check_resolution = 0;
  bool no_require_both = false;
  validate_cmd->add_option("--spec", spec_path, "architecture spec file")->required();
  validate_cmd->add_option("--flop-budget", flop_budget, "MAC budget (default 2.5e9)");
  validate_cmd->add_option("--q-pool-sites", q_pool_sites, "required q-pool sites (default 3)");
  validate_cmd->add_flag("--no-require-both-attention", no_require_both,
                         "drop the mask-unit+global requirement");
  validate_cmd->add_option("--resolution", check_resolution,
                           "resolution for the FLOP check (default: from the spec)");

  auto* search_cmd = app.add_subcommand("search", "constrained architecture search");
  std::string config_path, out_spec = "best_spec.json", out_trace = "trace.csv";
  std::optional<uint64_t> seed_override;
  uint64_t seed_value = 0;
  search_cmd->add_option("--config", config_path, "search config file")->required();
  search_cmd->add_option("--out-spec", out_spec, "best spec output path");
  search_cmd->add_option("--out-trace", out_trace, "trace CSV output path");
  search_cmd->add_option("--seed", seed_value, "override the config seed");

  auto* bench_cmd = app.add_subcommand("bench", "latency/throughput measurement");
  int batch = 1, runs = 1000, warmup = 10;
  uint64_t bench_seed = 0;
  std::string samples_path;
  bool use_median = false;
  bench_cmd->add_option("--spec", spec_path, "architecture spec file")->required();
  bench_cmd->add_option("--batch", batch, "batch size (default 1)");
  bench_cmd->add_option("--runs", runs, "timed runs (default 1000)");
  bench_cmd->add_option("--warmup", warmup, "warmup runs (default 10)");
  bench_cmd->add_option("--seed", bench_seed, "weights/input seed");
  bench_cmd->add_option("--format", format, "text|csv")->check(CLI::IsMember({"text", "csv"}));
  bench_cmd->add_option("--out", out_path, "write the report here instead of stdout");
  bench_cmd->add_option("--samples-out", samples_path, "dump raw samples, one ms value per line");
  bench_cmd->add_flag("--median", use_median, "print the median instead of the mean");

  auto* infer_cmd = app.add_subcommand("infer", "single forward pass, top-k logits");
  std::string input_path;
  uint64_t infer_seed = 0;
  int topk = 5;
  infer_cmd->add_option("--spec", spec_path, "architecture spec file")->required();
  infer_cmd->add_option("--seed", infer_seed, "weights/input seed");
  infer_cmd->add_option("--input", input_path, "raw tensor file (header + fp32, see docs)");
  infer_cmd->add_option("--topk", topk, "classes to print (default 5)");

  auto* train_cmd = app.add_subcommand("sanity-train", "SGD fit on the planted toy task");
  int steps = 200;
  double lr = 0.01;
  uint64_t train_seed = 0;
  train_cmd->add_option("--spec", spec_path, "architecture spec file")->required();
  train_cmd->add_option("--steps", steps, "SGD steps (default 200)");
  train_cmd->add_option("--lr", lr, "learning rate (default 0.01)");
  train_cmd->add_option("--seed", train_seed, "task/init seed");
  train_cmd->add_option("--out", out_path, "loss-curve CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  turbovit::ops::set_num_threads(threads);
  try {
    if (app.got_subcommand(analyze))
      return cmd_analyze(spec_path, resolution, format, out_path, flops_per_mac, include_norm_act);
    if (app.got_subcommand(validate_cmd)) {
      turbovit::SearchConstraints constraints;
      constraints.flop_budget = static_cast<int64_t>(flop_budget);
      constraints.required_q_pool_sites = q_pool_sites;
      constraints.require_mua_and_ga = !no_require_both;
      if (check_resolution > 0) {
        constraints.resolution = check_resolution;
      } else {
        turbovit::ArchSpec spec = turbovit::load_arch(spec_path);
        constraints.resolution = spec.input_resolution;
      }
      return cmd_validate(spec_path, constraints);
    }
    if (app.got_subcommand(search_cmd)) {
      if (search_cmd->count("--seed")) seed_override = seed_value;
      return cmd_search(config_path, out_spec, out_trace, seed_override);
    }
    if (app.got_subcommand(bench_cmd))
      return cmd_bench(spec_path, batch, runs, warmup, bench_seed, format, out_path, samples_path,
                       use_median);
    if (app.got_subcommand(infer_cmd)) return cmd_infer(spec_path, infer_seed, input_path, topk);
    if (app.got_subcommand(train_cmd))
      return cmd_sanity_train(spec_path, steps, lr, train_seed, out_path);
  } catch (const turbovit::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const turbovit::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
