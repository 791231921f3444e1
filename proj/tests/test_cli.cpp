#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "turbovit/arch.hpp"
#include "turbovit/io.hpp"

using namespace turbovit;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli");

namespace {

const std::string kCli = TURBOVIT_CLI_PATH;
const std::string kConfigDir = TURBOVIT_CONFIG_DIR;

struct CliResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "turbovit_cli_tests";
  fs::create_directories(dir);
  return dir;
}

int64_t csv_total(const std::string& csv, int column) {
  const size_t at = csv.find("\nTOTAL,");
  REQUIRE(at != std::string::npos);
  std::string line = csv.substr(at + 1, csv.find('\n', at + 1) - at - 1);
  int col = 0;
  size_t pos = 0;
  while (col < column) {
    pos = line.find(',', pos) + 1;
    ++col;
  }
  return std::stoll(line.substr(pos));
}

}  // namespace

TEST_CASE("analyze: canonical totals land in the published bands") {
  CliResult r = run_cli("analyze --spec " + kConfigDir + "/turbovit.json --format csv");
  CHECK(r.exit_code == 0);
  const int64_t params = csv_total(r.output, 2);
  const int64_t flops = csv_total(r.output, 3);
  CHECK(std::abs(params / 1e6 - 12.7) / 12.7 < 0.02);
  CHECK(std::abs(flops / 1e9 - 2.2) / 2.2 < 0.05);

  // Text output agrees on the totals.
  CliResult t = run_cli("analyze --spec " + kConfigDir + "/turbovit.json");
  CHECK(t.exit_code == 0);
  CHECK(t.output.find(std::to_string(params)) != std::string::npos);
  CHECK(t.output.find(std::to_string(flops)) != std::string::npos);
}

TEST_CASE("analyze: broken spec exits 2 and names the offending field") {
  const fs::path broken = scratch_dir() / "broken.json";
  ArchSpec spec = load_arch(kConfigDir + "/turbovit.json");
  spec.groups[1].heads = 5;  // 5 does not divide 32
  save_arch(spec, broken.string());
  CliResult r = run_cli("analyze --spec " + broken.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("groups[1].heads does not divide dim") != std::string::npos);
}

TEST_CASE("analyze: missing file exits 2") {
  CliResult r = run_cli("analyze --spec /nonexistent/nope.json");
  CHECK(r.exit_code == 2);
}

TEST_CASE("validate: canonical passes, two-pool variant fails with the reason listed") {
  CliResult ok = run_cli("validate --spec " + kConfigDir + "/turbovit.json");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("constraints: PASS") != std::string::npos);

  ArchSpec spec = load_arch(kConfigDir + "/turbovit.json");
  spec.groups[2].pool_h = spec.groups[2].pool_w = 1;
  const fs::path two = scratch_dir() / "two_pool.json";
  save_arch(spec, two.string());
  CliResult bad = run_cli("validate --spec " + two.string());
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("q_pool_sites 2 != required 3") != std::string::npos);
}

TEST_CASE("validate: over-budget spec reports the flop excess") {
  ArchSpec spec = load_arch(kConfigDir + "/turbovit.json");
  for (auto& g : spec.groups) g.count *= 2;
  const fs::path big = scratch_dir() / "big.json";
  save_arch(spec, big.string());
  CliResult r = run_cli("validate --spec " + big.string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("reason: flops ") != std::string::npos);
  CHECK(r.output.find("> 2.50e9") != std::string::npos);
}

TEST_CASE("search: fixed seed reproduces the trace byte for byte; result re-validates") {
  const fs::path dir = scratch_dir();
  const std::string common = "search --config " + kConfigDir + "/search-tiny.json";
  CliResult a = run_cli(common + " --out-spec " + (dir / "a.json").string() + " --out-trace " +
                        (dir / "a.csv").string());
  CliResult b = run_cli(common + " --out-spec " + (dir / "b.json").string() + " --out-trace " +
                        (dir / "b.csv").string());
  CHECK(a.exit_code == 0);
  CHECK(b.exit_code == 0);
  CHECK(read_text_file((dir / "a.csv").string()) == read_text_file((dir / "b.csv").string()));
  CHECK(read_text_file((dir / "a.json").string()) == read_text_file((dir / "b.json").string()));

  // The emitted spec passes the same constraints it was searched under.
  CliResult v = run_cli("validate --spec " + (dir / "a.json").string() +
                        " --flop-budget 60000000 --q-pool-sites 1 --resolution 64");
  CHECK(v.exit_code == 0);
}

TEST_CASE("search: trace has header plus one row per evaluation") {
  const fs::path dir = scratch_dir();
  CliResult r = run_cli("search --config " + kConfigDir + "/search-tiny.json --seed 3 --out-spec " +
                        (dir / "s.json").string() + " --out-trace " + (dir / "s.csv").string());
  CHECK(r.exit_code == 0);
  const std::string trace = read_text_file((dir / "s.csv").string());
  CHECK(trace.rfind("iteration,spec_hash,params,flops,feasible,U\n", 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 3000 + 1);
}

TEST_CASE("bench: sample count and throughput identity from the CLI surface") {
  const fs::path dir = scratch_dir();
  CliResult r = run_cli("bench --spec " + kConfigDir + "/tiny32.json --batch 1 --runs 50" +
                        " --warmup 2 --format csv --samples-out " + (dir / "samples.txt").string());
  CHECK(r.exit_code == 0);
  const std::string samples = read_text_file((dir / "samples.txt").string());
  CHECK(std::count(samples.begin(), samples.end(), '\n') == 50);

  // csv: model,batch_size,n_runs,warmup_runs,threads,mean_ms,median_ms,p95_ms,throughput
  std::istringstream is(r.output);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  std::vector<std::string> fields;
  std::stringstream ss(row);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  REQUIRE(fields.size() == 9);
  CHECK(fields[2] == "50");
  const double mean_ms = std::stod(fields[5]);
  const double throughput = std::stod(fields[8]);
  CHECK(std::abs(throughput - 1.0 / (mean_ms / 1000.0)) / throughput < 0.01);

  CliResult b32 = run_cli("bench --spec " + kConfigDir + "/tiny32.json --batch 32 --runs 2 --warmup 0");
  CHECK(b32.exit_code == 0);
}

TEST_CASE("infer: deterministic per seed, finite logits") {
  const std::string cmd = "infer --spec " + kConfigDir + "/tiny32.json --seed 11 --topk 4";
  CliResult a = run_cli(cmd);
  CliResult b = run_cli(cmd);
  CHECK(a.exit_code == 0);
  CHECK(a.output == b.output);
  CHECK(a.output.find("top-4:") != std::string::npos);
  CHECK(a.output.find("nan") == std::string::npos);
}

TEST_CASE("infer: reads the raw tensor format; malformed shape exits 2") {
  const fs::path dir = scratch_dir();
  TensorF good({1, 3, 32, 32});
  Rng rng(5);
  rng.fill_uniform(good, -1.0, 1.0);
  write_raw_tensor(good, (dir / "good.bin").string());
  CliResult ok = run_cli("infer --spec " + kConfigDir + "/tiny32.json --input " +
                         (dir / "good.bin").string());
  CHECK(ok.exit_code == 0);

  TensorF bad({1, 3, 16, 16});
  write_raw_tensor(bad, (dir / "bad.bin").string());
  CliResult fail = run_cli("infer --spec " + kConfigDir + "/tiny32.json --input " +
                           (dir / "bad.bin").string());
  CHECK(fail.exit_code == 2);
  CHECK(fail.output.find("expected shape [B 3 32 32]") != std::string::npos);

  std::ofstream garbage(dir / "garbage.bin");
  garbage << "not a tensor\n";
  garbage.close();
  CliResult g = run_cli("infer --spec " + kConfigDir + "/tiny32.json --input " +
                        (dir / "garbage.bin").string());
  CHECK(g.exit_code == 2);
}

TEST_CASE("sanity-train: emits one loss row per step") {
  const fs::path dir = scratch_dir();
  CliResult r = run_cli("sanity-train --spec " + kConfigDir + "/tiny32.json --steps 3 --out " +
                        (dir / "loss.csv").string());
  CHECK(r.exit_code == 0);
  const std::string csv = read_text_file((dir / "loss.csv").string());
  CHECK(csv.rfind("step,loss\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(r.output.find("eval accuracy") != std::string::npos);
}

TEST_CASE("bad usage exits 2, --version exits 0") {
  CHECK(run_cli("analyze").exit_code == 2);          // missing --spec
  CHECK(run_cli("no-such-command").exit_code == 2);  // unknown subcommand
  CHECK(run_cli("--version").exit_code == 0);
}

TEST_CASE("--threads is accepted before or after the subcommand, results identical") {
  const std::string args = "infer --spec " + kConfigDir + "/tiny32.json --seed 4";
  CliResult before = run_cli("--threads 2 " + args);
  CliResult after = run_cli(args + " --threads 2");
  CliResult single = run_cli(args);
  CHECK(before.exit_code == 0);
  CHECK(after.exit_code == 0);
  CHECK(before.output == after.output);
  CHECK(before.output == single.output);  // threading never changes results
}

TEST_SUITE_END();
