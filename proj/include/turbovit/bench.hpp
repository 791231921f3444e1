#pragma once

// Inference latency / throughput harness: warmup runs followed by n timed
// runs over a fixed seeded input, one forward call per timing bracket.
// Absolute numbers are hardware-dependent by nature; the report records the
// protocol (batch size, run counts, thread count, hardware string) alongside
// the samples so results are interpretable.

#include <string>
#include <vector>

#include "turbovit/model.hpp"

namespace turbovit {

struct BenchReport {
  std::string model_name;
  std::string hardware;
  int batch_size = 1;
  int n_runs = 0;
  int warmup_runs = 0;
  int threads = 1;
  std::vector<double> samples_ms;  // exactly n_runs entries, monotonic clock
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double throughput = 0.0;  // images/s = batch_size / (mean_ms / 1000)
};

BenchReport run_bench(const Model<float>& model, int batch_size, int n_runs, int warmup_runs,
                      uint64_t seed = 0);

// Plain-text table (Model, Batch Size, Latency (ms), Throughput (images/s)).
// The header states whether the latency column is the mean or the median.
std::string bench_table(const std::vector<BenchReport>& reports, bool use_median = false);
std::string bench_csv(const std::vector<BenchReport>& reports);
std::string bench_samples(const BenchReport& report);  // one ms value per line

// Lossless JSON round-trip of a report.
std::string bench_to_json(const BenchReport& report);
BenchReport bench_from_json(const std::string& text);

std::string hardware_descriptor();

}  // namespace turbovit
