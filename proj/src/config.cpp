#include "flsim/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include "flsim/error.hpp"

namespace flsim {

using nlohmann::json;

namespace {

// Floats are echoed through their shortest decimal form so 0.9f reads as 0.9
// rather than 0.8999999761581421; parsing it back yields the same float.
double echo(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

nlohmann::json echo(const std::vector<float>& v) {
  auto out = nlohmann::json::array();
  for (float x : v) out.push_back(echo(x));
  return out;
}

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path, what); }

std::string type_name(const json& j) { return j.type_name(); }

// Reads keys of one JSON object and rejects any key it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object, got " + type_name(j_));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (const json* v = find(key)) out = convert<T>(*v, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(field(it.key()), "unknown field");
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(path, "expected a boolean, got " + type_name(v));
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path, "expected a string, got " + type_name(v));
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number()) fail(path, "expected an integer, got " + type_name(v));
      const double d = v.get<double>();
      if (v.is_number_float() && (d != std::floor(d) || std::abs(d) > 9e15)) fail(path, "expected an integer");
      if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        fail(path, "expected a nonnegative integer");
      if (v.is_number_float() && d < 0) fail(path, "expected a nonnegative integer");
      return v.is_number_float() ? static_cast<T>(d) : v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(path, "expected a number, got " + type_name(v));
      return v.get<T>();
    } else {
      // std::vector<U>
      if (!v.is_array()) fail(path, "expected an array, got " + type_name(v));
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& path, const std::string& value, const std::map<std::string, E>& names) {
  auto it = names.find(value);
  if (it != names.end()) return it->second;
  std::string options;
  for (const auto& [k, v] : names) options += (options.empty() ? "" : ", ") + k;
  fail(path, "unknown value \"" + value + "\" (expected one of: " + options + ")");
}

const std::map<std::string, Arch> kArchs{{"tiny-cnn", Arch::TinyCnn}, {"tiny-vit", Arch::TinyVit}, {"mlp", Arch::Mlp}};
const std::map<std::string, NormKind> kNorms{{"batch", NormKind::Batch}, {"group", NormKind::Group}};
const std::map<std::string, ScheduleKind> kSchedules{
    {"warmup-cosine", ScheduleKind::WarmupCosine}, {"step", ScheduleKind::StepDecay}, {"constant", ScheduleKind::Constant}};
const std::map<std::string, OptimizerKind> kOptimizers{{"sgd", OptimizerKind::SgdMomentum},
                                                       {"adamw", OptimizerKind::AdamW}};

template <class E>
std::string enum_name(E value, const std::map<std::string, E>& names) {
  for (const auto& [k, v] : names)
    if (v == value) return k;
  return "?";
}

std::string arch_name(Arch a) { return enum_name(a, kArchs); }

void parse_dataset(const json& j, DatasetSection& d) {
  Section s(j, "dataset");
  s.get("source", d.source);
  s.get("path", d.path);
  s.get("normalize", d.normalize);
  s.get("mean", d.mean);
  s.get("std", d.std);
  if (const json* syn = s.find("synthetic")) {
    Section t(*syn, "dataset.synthetic");
    auto& x = d.synthetic;
    t.get("num_classes", x.num_classes);
    t.get("samples_per_class", x.samples_per_class);
    t.get("height", x.height);
    t.get("width", x.width);
    t.get("channels", x.channels);
    t.get("noise_std", x.noise_std);
    t.get("seed", x.seed);
    t.get("train_fraction", x.train_fraction);
    t.get("val_fraction", x.val_fraction);
    t.finish();
  }
  s.finish();
}

void parse_partition(const json& j, PartitionSection& p) {
  Section s(j, "partition");
  s.get("scheme", p.scheme);
  s.get("num_clients", p.num_clients);
  s.get("seed", p.seed);
  if (const json* a = s.find("assignment")) {
    const std::string path = "partition.assignment";
    if (!a->is_array()) fail(path, "expected an array of client class lists");
    p.assignment.clear();
    for (std::size_t k = 0; k < a->size(); ++k) {
      const auto& client = (*a)[k];
      const std::string cpath = path + "[" + std::to_string(k) + "]";
      if (!client.is_array()) fail(cpath, "expected an array of [class, fraction] pairs");
      std::vector<ClassShare> shares;
      for (std::size_t i = 0; i < client.size(); ++i) {
        const std::string epath = cpath + "[" + std::to_string(i) + "]";
        const auto& pair = client[i];
        if (!pair.is_array() || pair.size() != 2) fail(epath, "expected [class, fraction]");
        shares.emplace_back(Section::convert<std::size_t>(pair[0], epath + "[0]"),
                            Section::convert<double>(pair[1], epath + "[1]"));
      }
      p.assignment.push_back(std::move(shares));
    }
  }
  s.finish();
}

void parse_model(const json& j, ModelSpec& m) {
  Section s(j, "model");
  std::string arch = arch_name(m.arch), norm = enum_name(m.norm, kNorms);
  s.get("arch", arch);
  m.arch = parse_enum(s.field("arch"), arch, kArchs);
  s.get("norm", norm);
  m.norm = parse_enum(s.field("norm"), norm, kNorms);
  s.get("image_size", m.image_size);
  s.get("channels", m.channels);
  s.get("num_classes", m.num_classes);
  s.get("groups", m.groups);
  s.get("widths", m.widths);
  s.get("patch_size", m.patch_size);
  s.get("embed_dim", m.embed_dim);
  s.get("depth", m.depth);
  s.get("heads", m.heads);
  s.get("mlp_ratio", m.mlp_ratio);
  s.get("hidden", m.hidden);
  s.finish();
}

void parse_federation(const json& j, FederationConfig& f) {
  Section s(j, "federation");
  std::string algorithm = to_string(f.algorithm);
  s.get("algorithm", algorithm);
  const auto a = parse_algorithm(algorithm);
  if (!a) fail(s.field("algorithm"), "unknown algorithm \"" + algorithm +
                                         "\" (expected fedavg, fedavgm, fedprox, fedavg-share, cwt or cwt-ewc)");
  f.algorithm = *a;
  s.get("local_epochs", f.local_epochs);
  s.get("rounds", f.rounds);
  s.get("sample_fraction", f.sample_fraction);
  s.get("batch_size", f.batch_size);
  s.get("mu", f.mu);
  s.get("beta", f.beta);
  s.get("share_fraction", f.share_fraction);
  s.get("lambda_ewc", f.lambda_ewc);
  s.get("fisher_batches", f.fisher_batches);
  s.get("accumulate_across_cycles", f.accumulate_across_cycles);
  if (const json* c = s.find("clip_norm"))
    f.clip_norm = c->is_null() ? std::nullopt : std::optional<double>(Section::convert<double>(*c, s.field("clip_norm")));
  s.get("equal_weights", f.equal_weights);
  s.get("threads", f.threads);
  s.get("seed", f.seed);
  if (const json* sch = s.find("schedule")) {
    Section t(*sch, "federation.schedule");
    std::string kind = enum_name(f.schedule.kind, kSchedules);
    t.get("kind", kind);
    f.schedule.kind = parse_enum(t.field("kind"), kind, kSchedules);
    t.get("base_lr", f.schedule.base_lr);
    t.get("warmup_steps", f.schedule.warmup_steps);
    t.get("step_period_rounds", f.step_period_rounds);
    t.get("step_factor", f.schedule.step_factor);
    t.finish();
  }
  if (const json* opt = s.find("optimizer")) {
    Section t(*opt, "federation.optimizer");
    std::string kind = enum_name(f.optimizer.kind, kOptimizers);
    t.get("kind", kind);
    f.optimizer.kind = parse_enum(t.field("kind"), kind, kOptimizers);
    t.get("momentum", f.optimizer.momentum);
    t.get("weight_decay", f.optimizer.weight_decay);
    t.get("beta1", f.optimizer.beta1);
    t.get("beta2", f.optimizer.beta2);
    t.get("eps", f.optimizer.eps);
    t.finish();
  }
  s.finish();
}

void parse_report(const json& j, ReportSection& r) {
  Section s(j, "report");
  s.get("output_dir", r.output_dir);
  if (const json* t = s.find("target_accuracy")) {
    if (t->is_string()) {
      if (t->get<std::string>() != "auto") fail(s.field("target_accuracy"), "expected a number, \"auto\" or null");
      r.target_auto = true;
      r.target_accuracy.reset();
    } else if (t->is_null()) {
      r.target_auto = false;
      r.target_accuracy.reset();
    } else {
      r.target_auto = false;
      r.target_accuracy = Section::convert<double>(*t, s.field("target_accuracy"));
    }
  }
  s.get("record_wall_time", r.record_wall_time);
  s.get("emit_forgetting", r.emit_forgetting);
  s.get("detailed_transmission", r.detailed_transmission);
  s.finish();
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  root.get("name", c.name);
  if (const json* v = root.find("dataset")) parse_dataset(*v, c.dataset);
  if (const json* v = root.find("partition")) parse_partition(*v, c.partition);
  if (const json* v = root.find("model")) parse_model(*v, c.model);
  if (const json* v = root.find("federation")) parse_federation(*v, c.federation);
  if (const json* v = root.find("report")) parse_report(*v, c.report);
  root.finish();
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& x = d.synthetic;
  const auto& m = c.model;
  const auto& f = c.federation;
  const auto& r = c.report;
  json assignment = json::array();
  for (const auto& client : c.partition.assignment) {
    json list = json::array();
    for (const auto& [cls, frac] : client) list.push_back({cls, frac});
    assignment.push_back(list);
  }
  json target = nullptr;
  if (r.target_auto) target = "auto";
  else if (r.target_accuracy) target = *r.target_accuracy;
  return {
      {"name", c.name},
      {"dataset",
       {{"source", d.source},
        {"synthetic",
         {{"num_classes", x.num_classes},
          {"samples_per_class", x.samples_per_class},
          {"height", x.height},
          {"width", x.width},
          {"channels", x.channels},
          {"noise_std", x.noise_std},
          {"seed", x.seed},
          {"train_fraction", x.train_fraction},
          {"val_fraction", x.val_fraction}}},
        {"path", d.path},
        {"normalize", d.normalize},
        {"mean", echo(d.mean)},
        {"std", echo(d.std)}}},
      {"partition",
       {{"scheme", c.partition.scheme},
        {"num_clients", c.partition.num_clients},
        {"seed", c.partition.seed},
        {"assignment", assignment}}},
      {"model",
       {{"arch", arch_name(m.arch)},
        {"image_size", m.image_size},
        {"channels", m.channels},
        {"num_classes", m.num_classes},
        {"norm", enum_name(m.norm, kNorms)},
        {"groups", m.groups},
        {"widths", m.widths},
        {"patch_size", m.patch_size},
        {"embed_dim", m.embed_dim},
        {"depth", m.depth},
        {"heads", m.heads},
        {"mlp_ratio", m.mlp_ratio},
        {"hidden", m.hidden}}},
      {"federation",
       {{"algorithm", to_string(f.algorithm)},
        {"local_epochs", f.local_epochs},
        {"rounds", f.rounds},
        {"sample_fraction", f.sample_fraction},
        {"batch_size", f.batch_size},
        {"mu", f.mu},
        {"beta", f.beta},
        {"share_fraction", f.share_fraction},
        {"lambda_ewc", f.lambda_ewc},
        {"fisher_batches", f.fisher_batches},
        {"accumulate_across_cycles", f.accumulate_across_cycles},
        {"clip_norm", f.clip_norm ? json(*f.clip_norm) : json(nullptr)},
        {"schedule",
         {{"kind", enum_name(f.schedule.kind, kSchedules)},
          {"base_lr", f.schedule.base_lr},
          {"warmup_steps", f.schedule.warmup_steps},
          {"step_period_rounds", f.step_period_rounds},
          {"step_factor", f.schedule.step_factor}}},
        {"optimizer",
         {{"kind", enum_name(f.optimizer.kind, kOptimizers)},
          {"momentum", echo(f.optimizer.momentum)},
          {"weight_decay", echo(f.optimizer.weight_decay)},
          {"beta1", echo(f.optimizer.beta1)},
          {"beta2", echo(f.optimizer.beta2)},
          {"eps", echo(f.optimizer.eps)}}},
        {"equal_weights", f.equal_weights},
        {"threads", f.threads},
        {"seed", f.seed}}},
      {"report",
       {{"output_dir", r.output_dir},
        {"target_accuracy", target},
        {"record_wall_time", r.record_wall_time},
        {"emit_forgetting", r.emit_forgetting},
        {"detailed_transmission", r.detailed_transmission}}},
  };
}

void validate(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.source != "synthetic" && d.source != "flds")
    fail("dataset.source", "expected \"synthetic\" or \"flds\", got \"" + d.source + "\"");
  if (d.source == "flds" && d.path.empty()) fail("dataset.path", "required when source is \"flds\"");
  if (d.source == "synthetic") {
    const auto& x = d.synthetic;
    if (x.num_classes < 1 || x.num_classes > 65536) fail("dataset.synthetic.num_classes", "must lie in [1, 65536]");
    if (x.samples_per_class < 1) fail("dataset.synthetic.samples_per_class", "must be >= 1");
    if (x.height < 1 || x.width < 1 || x.channels < 1) fail("dataset.synthetic", "image dimensions must be >= 1");
    if (!(x.noise_std >= 0.0)) fail("dataset.synthetic.noise_std", "must be >= 0");
    if (!(x.train_fraction > 0.0 && x.val_fraction >= 0.0 && x.train_fraction + x.val_fraction < 1.0))
      fail("dataset.synthetic.train_fraction", "train_fraction > 0, val_fraction >= 0 and their sum < 1 (a test split is required)");
    if (c.model.image_size != x.height || c.model.image_size != x.width)
      fail("model.image_size", "must equal the synthetic image height and width (" + std::to_string(x.height) + "x" +
                                   std::to_string(x.width) + ")");
    if (c.model.channels != x.channels) fail("model.channels", "must equal dataset.synthetic.channels");
    if (c.model.num_classes != x.num_classes) fail("model.num_classes", "must equal dataset.synthetic.num_classes");
  }
  if (d.normalize != "none" && d.normalize != "auto" && d.normalize != "explicit")
    fail("dataset.normalize", "expected \"none\", \"auto\" or \"explicit\"");
  if (d.normalize == "explicit") {
    if (d.mean.size() != c.model.channels || d.std.size() != c.model.channels)
      fail("dataset.mean", "explicit normalization needs one mean and std per channel");
    for (float s : d.std)
      if (!(s > 0.0f)) fail("dataset.std", "must be > 0 per channel");
  }
  try {
    validate(c.model);
  } catch (const InvalidArgument& e) {
    fail("model", e.what());
  }
  const auto& p = c.partition;
  static const std::set<std::string> schemes{"iid", "split2", "split3", "edge_case", "explicit"};
  if (!schemes.count(p.scheme)) fail("partition.scheme", "expected iid, split2, split3, edge_case or explicit");
  if (p.scheme != "edge_case" && p.num_clients < 1) fail("partition.num_clients", "must be >= 1");
  if (p.scheme == "explicit" && p.assignment.empty()) fail("partition.assignment", "required for the explicit scheme");
  if (p.scheme != "explicit" && !p.assignment.empty())
    fail("partition.assignment", "only used by the explicit scheme");
  try {
    validate(c.federation);
  } catch (const InvalidArgument& e) {
    fail(e.where(), std::string(e.what()).substr(e.where().size() + 2));
  }
  const bool batch_norm = c.model.arch == Arch::TinyCnn && c.model.norm == NormKind::Batch;
  if (batch_norm && p.scheme == "edge_case")
    fail("model.norm", "batch norm cannot train on single-sample clients (edge_case); use group norm or tiny-vit");
  if (batch_norm && c.federation.batch_size < 2) fail("federation.batch_size", "batch norm needs batches of >= 2");
  if (c.report.target_accuracy && !(*c.report.target_accuracy > 0.0 && *c.report.target_accuracy <= 1.0))
    fail("report.target_accuracy", "must lie in (0, 1]");
}

namespace {

const std::map<std::string, std::string> kAxisAliases{
    {"E", "federation.local_epochs"},   {"local_epochs", "federation.local_epochs"},
    {"mu", "federation.mu"},            {"beta", "federation.beta"},
    {"lr", "federation.schedule.base_lr"}, {"K", "partition.num_clients"},
    {"rounds", "federation.rounds"},    {"share_fraction", "federation.share_fraction"},
    {"lambda", "federation.lambda_ewc"}, {"lambda_ewc", "federation.lambda_ewc"},
    {"sample_fraction", "federation.sample_fraction"}, {"seed", "federation.seed"},
    {"batch_size", "federation.batch_size"}, {"noise", "dataset.synthetic.noise_std"},
};

}  // namespace

std::string resolve_axis(const std::string& axis) {
  auto it = kAxisAliases.find(axis);
  return it == kAxisAliases.end() ? axis : it->second;
}

ExperimentConfig with_field(const ExperimentConfig& config, const std::string& axis, double value) {
  const std::string path = resolve_axis(axis);
  json doc = to_json(config);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) fail(axis, "unknown config field \"" + path + "\"");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_number_integer()) {
    if (value != std::floor(value) || value < 0) fail(axis, "field \"" + path + "\" takes nonnegative integers");
    *node = static_cast<std::uint64_t>(value);
  } else if (node->is_number() || (node->is_null() && path == "federation.clip_norm")) {
    *node = value;
  } else {
    fail(axis, "field \"" + path + "\" is not numeric");
  }
  return parse_config(doc);
}

ExperimentConfig load_config(const std::string& source) {
  const std::string prefix = "preset:";
  if (source.rfind(prefix, 0) == 0) {
    auto p = builtin_preset(source.substr(prefix.size()));
    if (!p) fail("preset", "unknown preset \"" + source.substr(prefix.size()) + "\"");
    return *p;
  }
  if (!std::filesystem::exists(source)) {
    if (auto p = builtin_preset(source)) return *p;
    fail("config", "no such file or preset: " + source);
  }
  std::ifstream in(source);
  if (!in) fail("config", "cannot open " + source);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    fail("config", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

}  // namespace flsim
