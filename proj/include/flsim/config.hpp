#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flsim/data.hpp"
#include "flsim/federation.hpp"
#include "flsim/models.hpp"
#include "flsim/partition.hpp"

namespace flsim {

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | flds
  SyntheticSpec synthetic;
  std::string path;                  // flds only
  std::string normalize = "none";    // none | auto (train-split statistics) | explicit
  std::vector<float> mean, std;      // explicit only

  bool operator==(const DatasetSection&) const = default;
};

struct PartitionSection {
  std::string scheme = "iid";  // iid | split2 | split3 | edge_case | explicit
  std::size_t num_clients = 5;
  std::uint64_t seed = 0;
  ClassAssignment assignment;  // explicit only

  bool operator==(const PartitionSection&) const = default;
};

struct ReportSection {
  std::string output_dir;  // empty: "results/<name>"
  std::optional<double> target_accuracy;
  bool target_auto = false;  // 0.95 x accuracy of a centralized baseline
  bool record_wall_time = false;
  bool emit_forgetting = true;
  bool detailed_transmission = false;

  bool operator==(const ReportSection&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSection dataset;
  PartitionSection partition;
  ModelSpec model;
  FederationConfig federation;
  ReportSection report;

  bool operator==(const ExperimentConfig&) const = default;
};

// Strict parse: unknown keys and wrong types raise ConfigError whose where()
// is the dotted field path. Omitted keys take the documented defaults.
ExperimentConfig parse_config(const nlohmann::json& doc);
// Complete document with every field; parse_config(to_json(c)) == c.
nlohmann::json to_json(const ExperimentConfig& config);

// Cross-field checks that need no data (model/dataset geometry, algorithm
// parameters, batch norm with single-sample clients, ...).
void validate(const ExperimentConfig& config);

// "preset:<name>" or a bare preset name selects a built-in; otherwise a JSON file.
ExperimentConfig load_config(const std::string& source);
std::optional<ExperimentConfig> builtin_preset(const std::string& name);
std::vector<std::string> preset_names();

// Replaces a numeric field given as a dotted path or one of the short aliases
// (E, mu, beta, lr, K, rounds, ...). Throws ConfigError for unknown or
// non-numeric fields.
ExperimentConfig with_field(const ExperimentConfig& config, const std::string& axis, double value);
std::string resolve_axis(const std::string& axis);

}  // namespace flsim
