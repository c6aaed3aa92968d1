#include <doctest.h>

#include <fstream>
#include <string>

#include "flsim/config.hpp"
#include "flsim/error.hpp"
#include "flsim/experiment.hpp"

using namespace flsim;
using nlohmann::json;

namespace {

std::string error_path(const json& doc) {
  try {
    validate(parse_config(doc));
  } catch (const ConfigError& e) {
    return e.where();
  }
  return "";
}

}  // namespace

TEST_CASE("empty document gives documented defaults") {
  const auto c = parse_config(json::object());
  CHECK(c == ExperimentConfig{});
  CHECK(c.name == "experiment");
  CHECK(c.partition.scheme == "iid");
  CHECK(c.partition.num_clients == 5);
  CHECK(c.federation.algorithm == Algorithm::FedAvg);
  CHECK(c.federation.batch_size == 32);
  CHECK(c.federation.clip_norm == 1.0);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("echo round-trips for defaults and every preset") {
  CHECK(parse_config(to_json(ExperimentConfig{})) == ExperimentConfig{});
  const auto names = preset_names();
  CHECK(names.size() > 100);
  for (const auto& n : names) {
    const auto p = builtin_preset(n);
    REQUIRE_MESSAGE(p.has_value(), n);
    CHECK_NOTHROW(validate(*p));
    CHECK_MESSAGE(parse_config(to_json(*p)) == *p, n);
    CHECK(parse_config(json::parse(to_json(*p).dump())) == *p);
  }
}

TEST_CASE("unknown keys and type errors report the field path") {
  CHECK(error_path({{"federation", {{"mu_typo", 1}}}}) == "federation.mu_typo");
  CHECK(error_path({{"federation", {{"optimizer", {{"kind", "rmsprop"}}}}}}) == "federation.optimizer.kind");
  CHECK(error_path({{"federation", {{"rounds", "ten"}}}}) == "federation.rounds");
  CHECK(error_path({{"federation", {{"rounds", 2.5}}}}) == "federation.rounds");
  CHECK(error_path({{"federation", {{"batch_size", -1}}}}) == "federation.batch_size");
  CHECK(error_path({{"model", {{"arch", "resnet"}}}}) == "model.arch");
  CHECK(error_path({{"bogus", 1}}) == "bogus");
  CHECK(error_path({{"report", {{"target_accuracy", 1.5}}}}) == "report.target_accuracy");
  CHECK(error_path({{"partition", {{"assignment", {{{0, 0.5}}}}}}}) == "partition.assignment");
}

TEST_CASE("cross-field checks run before any work") {
  CHECK(error_path({{"federation", {{"algorithm", "fedavg-share"}}}}) == "federation.share_fraction");
  CHECK(error_path({{"partition", {{"scheme", "edge_case"}}}}) == "model.norm");
  CHECK(error_path({{"partition", {{"scheme", "edge_case"}}}, {"model", {{"norm", "group"}}}}).empty());
  CHECK(error_path({{"model", {{"image_size", 32}}}}) == "model.image_size");
  CHECK(error_path({{"model", {{"num_classes", 3}}}}) == "model.num_classes");
  CHECK(error_path({{"federation", {{"batch_size", 1}}}}) == "federation.batch_size");
  CHECK(error_path({{"dataset", {{"normalize", "explicit"}}}}) == "dataset.mean");
}

TEST_CASE("target accuracy accepts a number, auto or null") {
  auto c = parse_config({{"report", {{"target_accuracy", "auto"}}}});
  CHECK(c.report.target_auto);
  CHECK_FALSE(c.report.target_accuracy);
  c = parse_config({{"report", {{"target_accuracy", 0.8}}}});
  CHECK(*c.report.target_accuracy == 0.8);
  c = parse_config({{"federation", {{"clip_norm", nullptr}}}});
  CHECK_FALSE(c.federation.clip_norm);
}

TEST_CASE("with_field resolves aliases and rejects bad axes") {
  const ExperimentConfig base;
  CHECK(with_field(base, "E", 5).federation.local_epochs == 5);
  CHECK(with_field(base, "mu", 0.01).federation.mu == 0.01);
  CHECK(with_field(base, "lr", 0.003).federation.schedule.base_lr == 0.003);
  CHECK(with_field(base, "K", 7).partition.num_clients == 7);
  CHECK(with_field(base, "federation.beta", 0.5).federation.beta == 0.5);
  CHECK(with_field(base, "noise", 1.5).dataset.synthetic.noise_std == 1.5);
  CHECK_THROWS_AS(with_field(base, "nonexistent", 1), ConfigError);
  CHECK_THROWS_AS(with_field(base, "federation.algorithm", 1), ConfigError);
  CHECK_THROWS_AS(with_field(base, "E", 1.5), ConfigError);
  try {
    with_field(base, "gamma", 1);
  } catch (const ConfigError& e) {
    CHECK(e.where() == "gamma");
  }
}

TEST_CASE("load_config reads presets and commented json files") {
  CHECK(load_config("preset:cifar-like-split3-vit-fedavg").name == "cifar-like-split3-vit-fedavg");
  CHECK(load_config("cifar-like-iid-cnn-gn-fedprox").federation.mu == 0.1);
  CHECK_THROWS_AS(load_config("preset:nope"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "flsim_config_test.json";
  {
    std::ofstream out(path);
    out << "// comment\n{\"name\": \"x\", \"federation\": {\"rounds\": 3}}\n";
  }
  const auto c = load_config(path.string());
  CHECK(c.name == "x");
  CHECK(c.federation.rounds == 3);
  {
    std::ofstream out(path);
    out << "{\"name\": ";
  }
  CHECK_THROWS_AS(load_config(path.string()), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("preset grammar") {
  CHECK(builtin_preset("cifar-like-split3-vit-fedavg-share")->federation.algorithm == Algorithm::FedAvgShare);
  CHECK(builtin_preset("cifar-like-split3-vit-fedavg-share")->federation.share_fraction == 0.05);
  CHECK(builtin_preset("cifar-like-split3-cnn-bn-cwt-ewc")->federation.algorithm == Algorithm::CwtEwc);
  CHECK(builtin_preset("cifar-like-split3-cnn-bn-fedavgm")->federation.beta == 0.3);
  CHECK(builtin_preset("retina-like-split2-cnn-gn-fedavgm")->federation.beta == 0.5);
  CHECK(builtin_preset("retina-like-split2-cnn-gn-fedprox")->federation.mu == 0.001);
  CHECK(builtin_preset("retina-like-split2-cnn-gn-fedprox")->federation.schedule.kind == ScheduleKind::StepDecay);
  CHECK(builtin_preset("cifar-like-iid-vit-fedavg-e10")->federation.local_epochs == 10);
  CHECK(builtin_preset("retina-like-edge-case-vit-fedavg")->partition.scheme == "edge_case");
  CHECK_FALSE(builtin_preset("retina-like-edge-case-cnn-bn-fedavg"));
  CHECK_FALSE(builtin_preset("cifar-like-iid-vit-fedprox-e5"));
  CHECK_FALSE(builtin_preset("cifar-like-iid-vit"));
  CHECK_FALSE(builtin_preset("cifar-like-iid-vit-fedavgx"));
  CHECK_FALSE(builtin_preset("mnist-like-iid-vit-fedavg"));
}

TEST_CASE("preset partitions reach their heterogeneity targets") {
  CHECK(prepare(*builtin_preset("cifar-like-split3-cnn-bn-fedavg")).partition.mean_ks == 1.0);
  CHECK(prepare(*builtin_preset("cifar-like-iid-cnn-bn-fedavg")).partition.mean_ks < 0.1);
  const auto r3 = prepare(*builtin_preset("retina-like-split3-cnn-gn-fedavg")).partition;
  CHECK(r3.mean_ks == doctest::Approx(0.583).epsilon(0.02));
  const auto r2 = prepare(*builtin_preset("retina-like-split2-cnn-gn-fedavg")).partition;
  CHECK(r2.mean_ks == doctest::Approx(0.467).epsilon(0.02));
  const auto edge = prepare(*builtin_preset("retina-like-edge-case-cnn-gn-fedavg"));
  CHECK(edge.partition.shards.size() == 6000);
}

TEST_CASE("data-dependent checks raise ConfigError before training") {
  ExperimentConfig c;
  c.dataset.synthetic.samples_per_class = 2;
  c.partition.num_clients = 50;
  CHECK_THROWS_AS(prepare(c), ConfigError);

  ExperimentConfig w;
  w.federation.schedule.kind = ScheduleKind::WarmupCosine;
  w.federation.schedule.warmup_steps = 1000000;
  try {
    prepare(w);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.where() == "federation.schedule");
  }

  const auto path = std::filesystem::temp_directory_path() / "flsim_config_test.flds";
  SyntheticSpec s;
  s.height = s.width = 8;
  s.samples_per_class = 20;
  write_flds(generate_synthetic(s), path);
  ExperimentConfig f;
  f.dataset.source = "flds";
  f.dataset.path = path.string();
  try {
    prepare(f);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.where() == "model");
  }
  f.model.image_size = 8;
  f.model.widths = {8, 8};
  CHECK_NOTHROW(prepare(f));
  std::filesystem::remove(path);
}
