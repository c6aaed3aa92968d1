#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "flsim/config.hpp"
#include "flsim/error.hpp"
#include "flsim/experiment.hpp"

using namespace flsim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("flsim_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

ExperimentConfig small_config(Algorithm a = Algorithm::FedAvg) {
  ExperimentConfig c;
  c.name = "small";
  auto& s = c.dataset.synthetic;
  s.num_classes = 4;
  s.samples_per_class = 30;
  s.height = s.width = 8;
  s.noise_std = 0.5;
  c.dataset.normalize = "auto";
  c.model.num_classes = 4;
  c.model.image_size = 8;
  c.model.widths = {8, 8};
  c.partition.scheme = "split3";
  c.partition.num_clients = 2;
  c.federation.algorithm = a;
  c.federation.rounds = 4;
  c.federation.batch_size = 8;
  c.federation.schedule.base_lr = 0.05;
  return c;
}

}  // namespace

TEST_CASE("format_number is shortest round-trip") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0) == "1");
  CHECK(format_number(0.25) == "0.25");
  for (double v : {1.0 / 3.0, 1e-300, 123456.789, 0.7000000000000001})
    CHECK(std::stod(format_number(v)) == v);
}

TEST_CASE("run writes all outputs, deterministically") {
  TempDir tmp("run");
  const auto c = small_config();
  const auto a = run_experiment(c, {tmp.path / "a", nullptr});
  const auto b = run_experiment(c, {tmp.path / "b", nullptr});
  CHECK(fs::exists(tmp.path / "a" / "rounds.csv"));
  CHECK(fs::exists(tmp.path / "a" / "summary.json"));
  CHECK_FALSE(fs::exists(tmp.path / "a" / "forgetting.csv"));
  CHECK_FALSE(fs::exists(tmp.path / "a" / "rounds.csv.tmp"));
  CHECK(slurp(tmp.path / "a" / "rounds.csv") == slurp(tmp.path / "b" / "rounds.csv"));
  CHECK(slurp(tmp.path / "a" / "summary.json") == slurp(tmp.path / "b" / "summary.json"));

  const auto rows = lines(slurp(tmp.path / "a" / "rounds.csv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] ==
        "round,global_test_acc,client0_val_acc,client1_val_acc,cumulative_transmitted_params,mean_weight_divergence,wall_ms");
  CHECK(rows[1].rfind("1,", 0) == 0);

  const auto s = json::parse(slurp(tmp.path / "a" / "summary.json"));
  CHECK(s["mean_ks"] == 1.0);
  CHECK(s["param_count"] == a.run.param_count);
  CHECK(s["seed"] == 0);
  CHECK(s["final_global_test_acc"] == a.run.records.back().global_test_acc);
  CHECK(s["rounds_to_target"].is_null());
  CHECK(s["transmitted_params_total"] == 4 * a.run.param_count);
  CHECK(parse_config(s["config"]) == c);
}

TEST_CASE("re-running the echoed config reproduces the results") {
  TempDir tmp("echo");
  auto c = small_config();
  c.federation.algorithm = Algorithm::FedAvgM;
  c.federation.beta = 0.5;
  run_experiment(c, {tmp.path / "a", nullptr});
  const auto echoed = parse_config(json::parse(slurp(tmp.path / "a" / "summary.json"))["config"]);
  run_experiment(echoed, {tmp.path / "b", nullptr});
  CHECK(slurp(tmp.path / "a" / "rounds.csv") == slurp(tmp.path / "b" / "rounds.csv"));
}

TEST_CASE("transmitted size equals rounds-to-target times param count recomputed from rounds.csv") {
  TempDir tmp("target");
  for (double target : {0.3, 1.0}) {
    auto c = small_config();
    c.report.target_accuracy = target;
    const auto dir = tmp.path / format_number(target);
    run_experiment(c, {dir, nullptr});
    const auto s = json::parse(slurp(dir / "summary.json"));
    std::optional<std::uint64_t> first;
    for (const auto& row : lines(slurp(dir / "rounds.csv"))) {
      if (row.rfind("round", 0) == 0) continue;
      const auto comma = row.find(',');
      const double acc = std::stod(row.substr(comma + 1, row.find(',', comma + 1) - comma - 1));
      if (!first && acc >= target) first = std::stoull(row.substr(0, comma));
    }
    if (first) {
      CHECK(s["rounds_to_target"] == *first);
      CHECK(s["transmitted_params"] == *first * s["param_count"].get<std::uint64_t>());
    } else {
      CHECK(s["rounds_to_target"] == "inf");
      CHECK(s["transmitted_params"] == "inf");
    }
  }
}

TEST_CASE("auto target trains a centralized baseline first") {
  TempDir tmp("auto");
  auto c = small_config();
  c.report.target_auto = true;
  const auto out = run_experiment(c, {tmp.path, nullptr});
  CHECK(out.summary["target_source"] == "auto");
  CHECK(out.summary["target_accuracy"].get<double>() == 0.95 * out.summary["central_baseline_acc"].get<double>());
}

TEST_CASE("cyclic runs write the forgetting trace") {
  TempDir tmp("cwt");
  auto c = small_config(Algorithm::Cwt);
  c.federation.rounds = 2;
  const auto out = run_experiment(c, {tmp.path, nullptr});
  const auto rows = lines(slurp(tmp.path / "forgetting.csv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "visit,round,trained_client,client0_val_acc,client1_val_acc");
  CHECK(rows[1].rfind("0,1,0,", 0) == 0);
  CHECK(rows[4].rfind("3,2,1,", 0) == 0);
  CHECK(out.summary["forgetting_drop"].size() == 2);
}

TEST_CASE("sweep with mu = 0 reproduces plain fedavg byte-identically") {
  TempDir tmp("sweep");
  run_experiment(small_config(), {tmp.path / "fedavg", nullptr});
  auto prox = small_config(Algorithm::FedProx);
  prox.federation.mu = 0.1;
  const auto runs = run_sweep(prox, "mu", {0.0, 0.1}, {tmp.path / "sweep", nullptr});
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].second == tmp.path / "sweep" / "mu=0");
  CHECK(slurp(tmp.path / "sweep" / "mu=0" / "rounds.csv") == slurp(tmp.path / "fedavg" / "rounds.csv"));
  CHECK(slurp(tmp.path / "sweep" / "mu=0.1" / "rounds.csv") != slurp(tmp.path / "fedavg" / "rounds.csv"));
  const auto index = json::parse(slurp(tmp.path / "sweep" / "sweep_index.json"));
  REQUIRE(index.size() == 2);
  CHECK(index[1]["axis"] == "federation.mu");
  CHECK(index[1]["value"] == 0.1);
  CHECK(index[1]["dir"] == "mu=0.1");
}

TEST_CASE("sweep over E gives one directory per value; bad axes fail before running") {
  TempDir tmp("sweepE");
  auto c = small_config();
  c.federation.rounds = 1;
  const auto runs = run_sweep(c, "E", {1, 2}, {tmp.path, nullptr});
  CHECK(runs.size() == 2);
  CHECK(fs::exists(tmp.path / "E=1" / "rounds.csv"));
  CHECK(fs::exists(tmp.path / "E=2" / "rounds.csv"));
  CHECK(json::parse(slurp(tmp.path / "E=2" / "summary.json"))["config"]["federation"]["local_epochs"] == 2);

  TempDir bad("sweepbad");
  CHECK_THROWS_AS(run_sweep(c, "gamma", {1}, {bad.path, nullptr}), ConfigError);
  CHECK_THROWS_AS(run_sweep(c, "mu", {0.1, -1}, {bad.path, nullptr}), ConfigError);
  CHECK(fs::is_empty(bad.path));
}

TEST_CASE("plotdata copies values verbatim and counts rows") {
  TempDir tmp("plot");
  auto c = small_config();
  c.federation.rounds = 10;
  run_experiment(c, {tmp.path / "ten", nullptr});
  c.federation.rounds = 3;
  run_experiment(c, {tmp.path / "three", nullptr});

  const auto one = emit_plotdata({tmp.path / "ten"});
  CHECK(one.runs_read == 1);
  const auto rows = lines(one.csv);
  REQUIRE(rows.size() == 11);
  CHECK(rows[0] == "run_id,round,metric,value");
  // Diff against the source column.
  const auto src = lines(slurp(tmp.path / "ten" / "rounds.csv"));
  for (std::size_t i = 1; i < src.size(); ++i) {
    const auto comma = src[i].find(',');
    const auto acc = src[i].substr(comma + 1, src[i].find(',', comma + 1) - comma - 1);
    CHECK(rows[i] == "ten," + src[i].substr(0, comma) + ",global_test_acc," + acc);
  }

  const auto merged = emit_plotdata({tmp.path / "ten", tmp.path / "three", tmp.path / "missing"});
  CHECK(merged.runs_read == 2);
  CHECK(lines(merged.csv).size() == 1 + 10 + 3);
  CHECK(merged.warnings.size() == 1);

  const auto all = emit_plotdata({tmp.path / "three"}, true);
  CHECK(lines(all.csv).size() == 1 + 3 * 6);

  fs::create_directories(tmp.path / "corrupt");
  std::ofstream(tmp.path / "corrupt" / "rounds.csv") << "round,global_test_acc,x\n1,0.5\n";
  const auto none = emit_plotdata({tmp.path / "corrupt", tmp.path / "missing"});
  CHECK(none.runs_read == 0);
  CHECK(none.warnings.size() == 2);
}

TEST_CASE("output directory honours FLSIM_OUTPUT_ROOT") {
  ExperimentConfig c;
  c.name = "n";
  ::unsetenv("FLSIM_OUTPUT_ROOT");
  CHECK(output_dir_for(c) == fs::path("results") / "n");
  ::setenv("FLSIM_OUTPUT_ROOT", "/tmp/root", 1);
  CHECK(output_dir_for(c) == fs::path("/tmp/root/results/n"));
  c.report.output_dir = "/abs";
  CHECK(output_dir_for(c) == fs::path("/abs"));
  ::unsetenv("FLSIM_OUTPUT_ROOT");
}
