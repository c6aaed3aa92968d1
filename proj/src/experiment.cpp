#include "flsim/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "flsim/error.hpp"

namespace flsim {

using nlohmann::json;

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("write", "cannot open " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write", "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string rounds_csv(const std::vector<RoundRecord>& records, std::size_t num_clients) {
  const bool with_val = !records.empty() && !records.front().per_client_val_acc.empty();
  std::ostringstream out;
  out << "round,global_test_acc";
  if (with_val)
    for (std::size_t k = 0; k < num_clients; ++k) out << ",client" << k << "_val_acc";
  out << ",cumulative_transmitted_params,mean_weight_divergence,wall_ms\n";
  for (const auto& r : records) {
    out << r.round << ',' << format_number(r.global_test_acc);
    for (double a : r.per_client_val_acc) out << ',' << format_number(a);
    out << ',' << r.cumulative_transmitted_params << ',' << format_number(r.mean_weight_divergence) << ','
        << r.wall_ms << '\n';
  }
  return out.str();
}

std::string forgetting_csv(const ForgettingTrace& trace) {
  std::ostringstream out;
  out << "visit,round,trained_client";
  for (std::size_t k = 0; k < trace.num_clients; ++k) out << ",client" << k << "_val_acc";
  out << '\n';
  for (const auto& row : trace.rows) {
    out << row.visit << ',' << row.round << ',' << row.trained_client;
    for (double a : row.accuracy) out << ',' << format_number(a);
    out << '\n';
  }
  return out.str();
}

PreparedData prepare(const ExperimentConfig& c) {
  validate(c);
  PreparedData p;
  if (c.dataset.source == "synthetic") {
    p.dataset = generate_synthetic(c.dataset.synthetic);
    p.dataset.name = c.name;
  } else {
    try {
      p.dataset = load_flds(c.dataset.path);
    } catch (const FormatError& e) {
      throw ConfigError("dataset.path", e.what());
    }
    const auto& d = p.dataset;
    if (d.height != c.model.image_size || d.width != c.model.image_size || d.channels != c.model.channels ||
        d.num_classes != c.model.num_classes) {
      throw ConfigError("model", "model geometry does not match the dataset file (" + std::to_string(d.channels) + "x" +
                                     std::to_string(d.height) + "x" + std::to_string(d.width) + ", " +
                                     std::to_string(d.num_classes) + " classes)");
    }
  }
  auto& d = p.dataset;
  const auto train = d.indices(Split::Train);
  if (train.empty()) throw ConfigError("dataset", "no training samples");
  if (d.indices(Split::Test).empty()) throw ConfigError("dataset", "no test samples");
  if (c.dataset.normalize == "auto") {
    const auto stats = channel_statistics(d, train);
    for (float s : stats.std)
      if (!(s > 0.0f)) throw ConfigError("dataset.normalize", "a channel has zero variance on the train split");
    d = normalize(d, stats.mean, stats.std);
  } else if (c.dataset.normalize == "explicit") {
    d = normalize(d, c.dataset.mean, c.dataset.std);
  }

  const auto& ps = c.partition;
  try {
    if (ps.scheme == "iid") {
      p.partition = partition_iid(d, ps.num_clients, ps.seed);
    } else if (ps.scheme == "split2") {
      p.partition = partition_label_skew(d, split2_assignment(ps.num_clients, d.num_classes), ps.seed);
    } else if (ps.scheme == "split3") {
      p.partition = partition_label_skew(d, split3_assignment(ps.num_clients, d.num_classes), ps.seed);
    } else if (ps.scheme == "explicit") {
      p.partition = partition_label_skew(d, ps.assignment, ps.seed);
    } else {
      p.partition = partition_edge_case(d);
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError("partition", e.what());
  }

  // The schedule must fit the run's step budget.
  const auto& f = c.federation;
  std::size_t steps = 0;
  if (is_serial(f.algorithm)) {
    for (const auto& s : p.partition.shards) steps += f.local_epochs * batches_per_epoch(s.train_indices.size(), f.batch_size);
  } else {
    steps = parallel_steps_per_round(f, p.partition.shards);
  }
  try {
    resolve_schedule(f, steps);
  } catch (const InvalidArgument& e) {
    throw ConfigError("federation.schedule", std::string(e.what()) + " (run has " + std::to_string(f.rounds * steps) +
                                                 " local steps)");
  }
  return p;
}

json target_summary(std::span<const double> trace, std::optional<double> target, std::uint64_t param_count) {
  if (!target) return {{"rounds_to_target", nullptr}, {"transmitted_params", nullptr}};
  const auto r = rounds_to_target(trace, *target);
  if (!r) return {{"rounds_to_target", "inf"}, {"transmitted_params", "inf"}};
  return {{"rounds_to_target", *r}, {"transmitted_params", transmitted_size(*r, param_count)}};
}

std::filesystem::path output_dir_for(const ExperimentConfig& c) {
  std::filesystem::path dir = c.report.output_dir.empty() ? std::filesystem::path("results") / c.name
                                                          : std::filesystem::path(c.report.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv("FLSIM_OUTPUT_ROOT"); root && *root) dir = std::filesystem::path(root) / dir;
  }
  return dir;
}

ExperimentOutcome run_experiment(const ExperimentConfig& c, const RunOptions& options) {
  PreparedData data = prepare(c);
  ExperimentOutcome out;
  out.output_dir = options.output_dir ? *options.output_dir : output_dir_for(c);
  FederationConfig f = c.federation;
  f.record_wall_time = c.report.record_wall_time;

  std::optional<double> target = c.report.target_accuracy;
  std::optional<double> baseline;
  if (c.report.target_auto) {
    if (options.log) *options.log << "[" << c.name << "] centralized baseline\n";
    const auto central = train_centralized(f, c.model, data.dataset, data.dataset.indices(Split::Train));
    baseline = central.records.back().global_test_acc;
    target = 0.95 * *baseline;
  }

  const std::size_t K = data.partition.shards.size();
  out.run = run_federation(f, data.partition, c.model, data.dataset, [&](const RoundRecord& r) {
    if (options.log)
      *options.log << "[" << c.name << "] round " << r.round << "/" << f.rounds
                   << " test_acc=" << format_number(r.global_test_acc) << "\n";
  });
  const auto& run = out.run;

  std::vector<double> trace;
  for (const auto& r : run.records) trace.push_back(r.global_test_acc);
  json summary;
  summary["name"] = c.name;
  summary["algorithm"] = to_string(f.algorithm);
  summary["rounds"] = f.rounds;
  summary["num_clients"] = K;
  summary["seed"] = f.seed;
  summary["param_count"] = run.param_count;
  summary["reference_param_counts"] = {{"vit_s", kVitSmallReferenceParams}, {"resnet50", kResNet50ReferenceParams}};
  summary["final_global_test_acc"] = trace.back();
  summary["best_global_test_acc"] = *std::max_element(trace.begin(), trace.end());
  summary["mean_ks"] = data.partition.mean_ks;
  summary["mean_ks_used"] = run.mean_ks_used;
  summary["target_accuracy"] = target ? json(*target) : json(nullptr);
  summary["target_source"] = c.report.target_auto ? "auto" : (target ? "config" : "none");
  summary["central_baseline_acc"] = baseline ? json(*baseline) : json(nullptr);
  summary.update(target_summary(trace, target, run.param_count));
  summary["transmitted_params_total"] = transmitted_size(f.rounds, run.param_count);
  if (c.report.detailed_transmission)
    summary["transmitted_params_detailed_up_and_down"] =
        transmitted_size_detailed(run.participants_per_round, run.param_count);
  summary["clamped_batch_clients"] = run.clamped_batch_clients;
  if (!run.forgetting.rows.empty()) {
    json drops = json::array();
    for (std::size_t k = 0; k < run.forgetting.num_clients; ++k) drops.push_back(forgetting_drop(run.forgetting, k));
    summary["forgetting_drop"] = drops;
  }
  summary["config"] = to_json(c);
  out.summary = summary;

  std::filesystem::create_directories(out.output_dir);
  write_file_atomic(out.output_dir / "rounds.csv", rounds_csv(run.records, K));
  if (is_serial(f.algorithm) && c.report.emit_forgetting)
    write_file_atomic(out.output_dir / "forgetting.csv", forgetting_csv(run.forgetting));
  write_file_atomic(out.output_dir / "summary.json", summary.dump(2) + "\n");
  if (run.clamped_batch_clients && options.log)
    *options.log << "[" << c.name << "] warning: batch_size exceeded the shard of " << run.clamped_batch_clients
                 << " client(s); clamped to the shard size\n";
  return out;
}

std::vector<std::pair<double, std::filesystem::path>> run_sweep(const ExperimentConfig& c, const std::string& axis,
                                                                const std::vector<double>& values,
                                                                const RunOptions& options) {
  if (values.empty()) throw ConfigError("values", "at least one value is required");
  const std::filesystem::path root = options.output_dir ? *options.output_dir : output_dir_for(c);
  std::vector<std::pair<ExperimentConfig, std::filesystem::path>> runs;
  for (double v : values) {
    ExperimentConfig run = with_field(c, axis, v);
    run.name = c.name + "/" + axis + "=" + format_number(v);
    validate(run);
    runs.emplace_back(std::move(run), root / (axis + "=" + format_number(v)));
  }
  json index = json::array();
  std::vector<std::pair<double, std::filesystem::path>> out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    RunOptions o = options;
    o.output_dir = runs[i].second;
    run_experiment(runs[i].first, o);
    index.push_back({{"axis", resolve_axis(axis)}, {"value", values[i]}, {"dir", runs[i].second.filename().string()}});
    out.emplace_back(values[i], runs[i].second);
  }
  write_file_atomic(root / "sweep_index.json", index.dump(2) + "\n");
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

PlotData emit_plotdata(const std::vector<std::filesystem::path>& dirs, bool all_metrics) {
  PlotData out;
  std::ostringstream csv;
  csv << "run_id,round,metric,value\n";
  for (const auto& dir : dirs) {
    const auto file = dir / "rounds.csv";
    std::ifstream in(file);
    if (!in) {
      out.warnings.push_back(file.string() + ": cannot open");
      continue;
    }
    std::string line;
    if (!std::getline(in, line)) {
      out.warnings.push_back(file.string() + ": empty file");
      continue;
    }
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "round" || header[1] != "global_test_acc") {
      out.warnings.push_back(file.string() + ": unexpected header");
      continue;
    }
    std::ostringstream rows;
    bool ok = true;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != header.size()) {
        out.warnings.push_back(file.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns");
        ok = false;
        break;
      }
      for (std::size_t k = 1; k < cells.size(); ++k) {
        if (!all_metrics && k != 1) continue;
        rows << dir.filename().string() << ',' << cells[0] << ',' << header[k] << ',' << cells[k] << '\n';
      }
    }
    if (!ok) continue;
    csv << rows.str();
    ++out.runs_read;
  }
  out.csv = csv.str();
  return out;
}

}  // namespace flsim
