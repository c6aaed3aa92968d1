#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flsim/config.hpp"
#include "flsim/federation.hpp"

namespace flsim {

struct PreparedData {
  Dataset dataset;
  PartitionReport partition;
};

// Builds (or loads) and normalizes the dataset and partitions it. Problems
// that only show once data exists (geometry, client count, schedule length)
// raise ConfigError, still before any training.
PreparedData prepare(const ExperimentConfig& config);

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides the config
  std::ostream* log = nullptr;                      // progress lines; null for silence
};

struct ExperimentOutcome {
  RunResult run;
  nlohmann::json summary;
  std::filesystem::path output_dir;
};

// report.output_dir (default "results/<name>"); relative paths resolve
// against $FLSIM_OUTPUT_ROOT when set.
std::filesystem::path output_dir_for(const ExperimentConfig& config);

// Runs the experiment and writes rounds.csv, forgetting.csv (serial
// algorithms) and summary.json into the output directory.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// One run per value, sequential, each in <dir>/<axis>=<value>; the seed is
// left unchanged so runs differ only in the swept field. Writes
// sweep_index.json mapping values to directories.
std::vector<std::pair<double, std::filesystem::path>> run_sweep(const ExperimentConfig& config,
                                                                const std::string& axis,
                                                                const std::vector<double>& values,
                                                                const RunOptions& options = {});

struct PlotData {
  std::string csv;  // run_id,round,metric,value
  std::vector<std::string> warnings;
  std::size_t runs_read = 0;
};
// Long-format merge of rounds.csv files. Values are copied verbatim. By
// default only global_test_acc is emitted; all_metrics adds every column.
PlotData emit_plotdata(const std::vector<std::filesystem::path>& dirs, bool all_metrics = false);

// rounds_to_target and transmitted_params (= rounds x param_count) for the
// summary; both "inf" when the trace never reaches the target, null without one.
nlohmann::json target_summary(std::span<const double> trace, std::optional<double> target,
                              std::uint64_t param_count);

// Shortest decimal that round-trips to the same double.
std::string format_number(double value);
std::string rounds_csv(const std::vector<RoundRecord>& records, std::size_t num_clients);
std::string forgetting_csv(const ForgettingTrace& trace);
// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace flsim
