#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flsim/config.hpp"
#include "flsim/error.hpp"
#include "flsim/experiment.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

flsim::RunOptions run_options(const std::string& output, bool quiet) {
  flsim::RunOptions o;
  if (!output.empty()) o.output_dir = std::filesystem::path(output);
  if (!quiet) o.log = &std::cerr;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic federated-learning simulator"};
  app.require_subcommand(1);

  std::string config_source, output, axis, plot_output;
  std::vector<double> values;
  std::vector<std::string> dirs;
  bool quiet = false, all_metrics = false;

  auto* run = app.add_subcommand("run", "Run one experiment and write rounds.csv, forgetting.csv, summary.json");
  run->add_option("config", config_source, "Config file, or preset name (optionally prefixed 'preset:')")->required();
  run->add_option("-o,--output", output, "Output directory (default: report.output_dir or results/<name>)");
  run->add_flag("-q,--quiet", quiet, "Suppress progress lines");

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a numeric field");
  sweep->add_option("config", config_source, "Config file or preset name")->required();
  sweep->add_option("--axis", axis, "Field: dotted path or alias (E, mu, beta, lr, K, rounds, ...)")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sweep->add_option("-o,--output", output, "Root directory for the per-value runs");
  sweep->add_flag("-q,--quiet", quiet, "Suppress progress lines");

  auto* plot = app.add_subcommand("plotdata", "Merge rounds.csv files into long format (run_id,round,metric,value)");
  plot->add_option("dirs", dirs, "Result directories")->required();
  plot->add_flag("--all-metrics", all_metrics, "Emit every column, not only global_test_acc");
  plot->add_option("-o,--output", plot_output, "Write to a file instead of stdout");

  auto* check = app.add_subcommand("validate", "Validate a config and print it with every default filled in");
  check->add_option("config", config_source, "Config file or preset name")->required();

  auto* presets = app.add_subcommand("presets", "List built-in presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (presets->parsed()) {
      for (const auto& n : flsim::preset_names()) std::cout << n << '\n';
      return 0;
    }
    if (plot->parsed()) {
      const auto data = flsim::emit_plotdata({dirs.begin(), dirs.end()}, all_metrics);
      for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
      if (data.runs_read == 0) {
        std::cerr << "error: no readable result directories\n";
        return kExitRuntime;
      }
      if (plot_output.empty())
        std::cout << data.csv;
      else
        flsim::write_file_atomic(plot_output, data.csv);
      return 0;
    }

    const auto config = flsim::load_config(config_source);
    if (check->parsed()) {
      flsim::prepare(config);
      std::cout << flsim::to_json(config).dump(2) << '\n';
      return 0;
    }
    if (run->parsed()) {
      const auto outcome = flsim::run_experiment(config, run_options(output, quiet));
      std::cout << outcome.output_dir.string() << '\n';
      return 0;
    }
    const auto runs = flsim::run_sweep(config, axis, values, run_options(output, quiet));
    for (const auto& [v, dir] : runs) std::cout << flsim::format_number(v) << '\t' << dir.string() << '\n';
    return 0;
  } catch (const flsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
