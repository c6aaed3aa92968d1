#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "flsim/config.hpp"

namespace flsim {

namespace {

// Desk-scale stand-ins for the paper's benchmarks.
//   cifar-like : 10 classes, 5 clients (CIFAR-10 regime)
//   retina-like: 2 classes, 4 clients, 6,000 training samples (Retina regime,
//                so the edge case yields 6,000 single-sample clients)
struct DatasetPreset {
  const char* name;
  std::size_t classes, per_class, clients;
  double noise, train_fraction, val_fraction;
  double mu, beta;        // FedProx / FedAvgM constants per benchmark
  bool step_for_optim;    // FedAvgM / FedProx use step decay without warmup
};

constexpr DatasetPreset kDatasets[] = {
    {"cifar-like", 10, 200, 5, 2.0, 0.7, 0.15, 0.1, 0.3, false},
    {"retina-like", 2, 6000, 4, 3.0, 0.5, 0.25, 0.001, 0.5, true},
};

constexpr const char* kPartitions[] = {"iid", "split2", "split3", "edge-case"};
constexpr const char* kModels[] = {"vit", "cnn-bn", "cnn-gn"};
constexpr const char* kAlgorithms[] = {"fedavg", "fedavgm", "fedprox", "fedavg-share", "cwt", "cwt-ewc"};
constexpr std::size_t kSweepEpochs[] = {5, 10};

constexpr std::size_t kRounds = 50;
constexpr std::size_t kEdgeRounds = 20;
constexpr double kEdgeSampleFraction = 0.01;
constexpr double kShareFraction = 0.05;
constexpr std::size_t kWarmupRounds = 2;

// Per-architecture optimizer and learning rate, chosen by grid search on
// cifar-like split2 (50 rounds, FedAvg) and applied to every partition. A
// from-scratch transformer does not train with SGD here, so it uses AdamW.
struct OptimPreset {
  OptimizerKind kind;
  double lr;
  float weight_decay;
};
constexpr OptimPreset kVitOptim{OptimizerKind::AdamW, 0.005, 0.05f};
constexpr OptimPreset kCnnOptim{OptimizerKind::SgdMomentum, 0.1, 0.0f};

// Two-class skew tables: each client holds an equal share of the data with
// the given fraction of class 0.
ClassAssignment two_class_skew(const std::vector<double>& class0_share) {
  const double per_client = 1.0 / static_cast<double>(class0_share.size());
  ClassAssignment a(class0_share.size());
  for (std::size_t k = 0; k < class0_share.size(); ++k) {
    if (class0_share[k] > 0.0) a[k].push_back({0, class0_share[k] * per_client});
    if (class0_share[k] < 1.0) a[k].push_back({1, (1.0 - class0_share[k]) * per_client});
  }
  return a;
}

bool consume(std::string& rest, const std::string& token) {
  if (rest.compare(0, token.size(), token) != 0) return false;
  if (rest.size() == token.size()) {
    rest.clear();
    return true;
  }
  if (rest[token.size()] != '-') return false;
  rest.erase(0, token.size() + 1);
  return true;
}

template <class Range>
std::optional<std::string> consume_any(std::string& rest, const Range& tokens) {
  // Longest match first so "fedavg-share" wins over "fedavg".
  std::optional<std::string> best;
  for (const char* t : tokens) {
    std::string copy = rest;
    if (consume(copy, t) && (!best || std::string(t).size() > best->size())) best = t;
  }
  if (best) consume(rest, *best);
  return best;
}

ExperimentConfig make_preset(const DatasetPreset& ds, const std::string& partition, const std::string& model,
                             const std::string& algorithm, std::size_t epochs, const std::string& name) {
  ExperimentConfig c;
  c.name = name;

  auto& s = c.dataset.synthetic;
  s.num_classes = ds.classes;
  s.samples_per_class = ds.per_class;
  s.noise_std = ds.noise;
  s.train_fraction = ds.train_fraction;
  s.val_fraction = ds.val_fraction;
  c.dataset.normalize = "auto";

  c.partition.num_clients = ds.clients;
  const bool edge = partition == "edge-case";
  if (edge) {
    c.partition.scheme = "edge_case";
  } else if (ds.classes == 2 && partition != "iid") {
    c.partition.scheme = "explicit";
    c.partition.assignment = partition == "split2" ? two_class_skew({0.9, 0.7, 0.3, 0.1})
                                                   : two_class_skew({1.0, 0.75, 0.25, 0.0});
  } else {
    c.partition.scheme = partition;
  }

  c.model.num_classes = ds.classes;
  c.model.arch = model == "vit" ? Arch::TinyVit : Arch::TinyCnn;
  c.model.norm = model == "cnn-gn" ? NormKind::Group : NormKind::Batch;

  auto& f = c.federation;
  f.algorithm = *parse_algorithm(algorithm);
  f.rounds = edge ? kEdgeRounds : kRounds;
  f.local_epochs = epochs;
  f.batch_size = 32;
  f.clip_norm = 1.0;
  if (edge && !is_serial(f.algorithm)) f.sample_fraction = kEdgeSampleFraction;
  if (f.algorithm == Algorithm::FedProx) f.mu = ds.mu;
  if (f.algorithm == Algorithm::FedAvgM) f.beta = ds.beta;
  if (f.algorithm == Algorithm::FedAvgShare) f.share_fraction = kShareFraction;

  const OptimPreset& o = model == "vit" ? kVitOptim : kCnnOptim;
  f.optimizer.kind = o.kind;
  f.optimizer.weight_decay = o.weight_decay;
  f.schedule.base_lr = o.lr;

  // Warmup covers the first rounds; the step estimate mirrors the batching rule.
  const double train = std::floor(static_cast<double>(ds.per_class) * ds.train_fraction) * static_cast<double>(ds.classes);
  const std::size_t clients = edge ? static_cast<std::size_t>(train) : ds.clients;
  const auto per_client = static_cast<std::size_t>(train / static_cast<double>(clients));
  const std::size_t batches = per_client <= 32 ? 1 : per_client / 32;
  const std::size_t steps_per_round = epochs * batches * (is_serial(f.algorithm) ? clients : 1);
  const bool step_decay = ds.step_for_optim && model != "vit" &&
                          (f.algorithm == Algorithm::FedAvgM || f.algorithm == Algorithm::FedProx);
  if (step_decay) {
    f.schedule.kind = ScheduleKind::StepDecay;
    f.schedule.warmup_steps = 0;
    f.schedule.step_factor = 0.5;
    f.step_period_rounds = 30;
  } else {
    f.schedule.kind = ScheduleKind::WarmupCosine;
    f.schedule.warmup_steps = kWarmupRounds * steps_per_round;
  }
  return c;
}

}  // namespace

std::optional<ExperimentConfig> builtin_preset(const std::string& name) {
  std::string rest = name;
  const DatasetPreset* ds = nullptr;
  for (const auto& d : kDatasets)
    if (consume(rest, d.name)) {
      ds = &d;
      break;
    }
  if (!ds) return std::nullopt;
  const auto partition = consume_any(rest, kPartitions);
  const auto model = consume_any(rest, kModels);
  const auto algorithm = consume_any(rest, kAlgorithms);
  if (!partition || !model || !algorithm) return std::nullopt;
  if (*partition == "edge-case" && *model == "cnn-bn") return std::nullopt;
  std::size_t epochs = 1;
  if (!rest.empty()) {
    bool matched = false;
    for (std::size_t e : kSweepEpochs)
      if (rest == "e" + std::to_string(e)) {
        epochs = e;
        matched = true;
      }
    if (!matched || *algorithm != "fedavg" || *partition == "edge-case") return std::nullopt;
  }
  return make_preset(*ds, *partition, *model, *algorithm, epochs, name);
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& ds : kDatasets)
    for (const char* p : kPartitions)
      for (const char* m : kModels) {
        const std::string pm = std::string(p) + "-" + m;
        if (pm == "edge-case-cnn-bn") continue;
        for (const char* a : kAlgorithms) out.push_back(std::string(ds.name) + "-" + pm + "-" + a);
        if (std::string(p) != "edge-case")
          for (std::size_t e : kSweepEpochs)
            out.push_back(std::string(ds.name) + "-" + pm + "-fedavg-e" + std::to_string(e));
      }
  return out;
}

}  // namespace flsim
