#include "turbovit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace turbovit {

using nlohmann::json;

BenchReport run_bench(const Model<float>& model, int batch_size, int n_runs, int warmup_runs,
                      uint64_t seed) {
  if (batch_size < 1 || n_runs < 1 || warmup_runs < 0)
    throw ConfigError("run_bench: batch_size and n_runs must be >= 1, warmup >= 0");

  const int r = model.spec.input_resolution;
  TensorF input({batch_size, 3, r, r});
  Rng rng(seed);
  rng.fill_uniform(input, -1.0, 1.0);

  BenchReport rep;
  rep.model_name = model.spec.name.empty() ? "unnamed" : model.spec.name;
  rep.hardware = hardware_descriptor();
  rep.batch_size = batch_size;
  rep.n_runs = n_runs;
  rep.warmup_runs = warmup_runs;
  rep.threads = ops::num_threads();
  rep.samples_ms.reserve(static_cast<size_t>(n_runs));

  for (int i = 0; i < warmup_runs; ++i) (void)forward(model, input);

  using clock = std::chrono::steady_clock;
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = clock::now();
    TensorF logits = forward(model, input);
    const auto t1 = clock::now();
    if (!logits.all_finite())
      throw ConfigError("run_bench: non-finite logits at run " + std::to_string(i));
    rep.samples_ms.push_back(
        std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count());
  }

  std::vector<double> sorted = rep.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : rep.samples_ms) sum += v;
  rep.mean_ms = sum / n_runs;
  rep.median_ms = n_runs % 2 ? sorted[static_cast<size_t>(n_runs / 2)]
                             : 0.5 * (sorted[static_cast<size_t>(n_runs / 2 - 1)] +
                                      sorted[static_cast<size_t>(n_runs / 2)]);
  const int rank = std::max(1, static_cast<int>(std::ceil(0.95 * n_runs)));
  rep.p95_ms = sorted[static_cast<size_t>(rank - 1)];
  rep.throughput = batch_size / (rep.mean_ms / 1000.0);
  return rep;
}

std::string bench_table(const std::vector<BenchReport>& reports, bool use_median) {
  std::ostringstream os;
  os << "latency column: " << (use_median ? "median" : "mean")
     << " over n runs (mean, median and p95 are all recorded)\n";
  size_t name_w = 5;
  for (const BenchReport& r : reports) name_w = std::max(name_w, r.model_name.size());
  os << std::left;
  os.width(static_cast<std::streamsize>(name_w + 2));
  os << "Model";
  os << "Batch Size    Latency (ms)    Throughput (images/s)\n";
  char buf[128];
  for (const BenchReport& r : reports) {
    const double lat = use_median ? r.median_ms : r.mean_ms;
    std::snprintf(buf, sizeof(buf), "%-*s%-14d%-16.3f%.1f\n", static_cast<int>(name_w + 2),
                  r.model_name.c_str(), r.batch_size, lat, r.throughput);
    os << buf;
  }
  if (!reports.empty())
    os << "(" << reports.front().n_runs << " runs, " << reports.front().warmup_runs
       << " warmup, threads=" << reports.front().threads << ", " << reports.front().hardware
       << ")\n";
  return os.str();
}

std::string bench_csv(const std::vector<BenchReport>& reports) {
  std::ostringstream os;
  os << "model,batch_size,n_runs,warmup_runs,threads,mean_ms,median_ms,p95_ms,throughput\n";
  char buf[256];
  for (const BenchReport& r : reports) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%d,%.6f,%.6f,%.6f,%.6f\n", r.model_name.c_str(),
                  r.batch_size, r.n_runs, r.warmup_runs, r.threads, r.mean_ms, r.median_ms,
                  r.p95_ms, r.throughput);
    os << buf;
  }
  return os.str();
}

std::string bench_samples(const BenchReport& report) {
  std::ostringstream os;
  char buf[64];
  for (double v : report.samples_ms) {
    std::snprintf(buf, sizeof(buf), "%.6f\n", v);
    os << buf;
  }
  return os.str();
}

std::string bench_to_json(const BenchReport& r) {
  json j;
  j["model"] = r.model_name;
  j["hardware"] = r.hardware;
  j["batch_size"] = r.batch_size;
  j["n_runs"] = r.n_runs;
  j["warmup_runs"] = r.warmup_runs;
  j["threads"] = r.threads;
  j["samples_ms"] = r.samples_ms;
  j["mean_ms"] = r.mean_ms;
  j["median_ms"] = r.median_ms;
  j["p95_ms"] = r.p95_ms;
  j["throughput"] = r.throughput;
  return j.dump(2) + "\n";
}

BenchReport bench_from_json(const std::string& text) {
  json j = json::parse(text);
  BenchReport r;
  r.model_name = j.value("model", "");
  r.hardware = j.value("hardware", "");
  r.batch_size = j.value("batch_size", 1);
  r.n_runs = j.value("n_runs", 0);
  r.warmup_runs = j.value("warmup_runs", 0);
  r.threads = j.value("threads", 1);
  r.samples_ms = j.value("samples_ms", std::vector<double>{});
  r.mean_ms = j.value("mean_ms", 0.0);
  r.median_ms = j.value("median_ms", 0.0);
  r.p95_ms = j.value("p95_ms", 0.0);
  r.throughput = j.value("throughput", 0.0);
  return r;
}

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      const size_t colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        const size_t start = cpu.find_first_not_of(" \t");
        if (start != std::string::npos) cpu = cpu.substr(start);
      }
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
}

}  // namespace turbovit
