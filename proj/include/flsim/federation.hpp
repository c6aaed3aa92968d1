#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/metrics.hpp"
#include "flsim/models.hpp"
#include "flsim/optim.hpp"
#include "flsim/parameter_set.hpp"
#include "flsim/partition.hpp"
#include "flsim/rng.hpp"

namespace flsim {

enum class Algorithm { FedAvg, FedAvgM, FedProx, FedAvgShare, Cwt, CwtEwc };

std::string to_string(Algorithm algorithm);
// Accepts the names printed by to_string ("fedavg", "cwt-ewc", ...).
std::optional<Algorithm> parse_algorithm(const std::string& name);
inline bool is_serial(Algorithm a) { return a == Algorithm::Cwt || a == Algorithm::CwtEwc; }

struct FederationConfig {
  Algorithm algorithm = Algorithm::FedAvg;
  std::size_t local_epochs = 1;  // E
  std::size_t rounds = 10;
  double sample_fraction = 1.0;
  std::size_t batch_size = 32;
  double mu = 0.0;              // fedprox
  double beta = 0.0;            // fedavgm server momentum
  double share_fraction = 0.0;  // fedavg-share
  double lambda_ewc = 5000.0;   // cwt-ewc
  std::size_t fisher_batches = 4;
  bool accumulate_across_cycles = false;  // keep EWC anchors from earlier cycles
  std::optional<double> clip_norm = 1.0;
  // kind, base_lr, warmup_steps and step_factor are used as given; the engine
  // fills in total_steps and converts step_period_rounds into local steps.
  LrSchedule schedule;
  std::size_t step_period_rounds = 1;
  OptimizerConfig optimizer;
  bool equal_weights = false;  // aggregate with weight 1 per client instead of n_i
  std::size_t threads = 1;     // concurrent local training within a round
  bool record_wall_time = false;  // wall_ms stays 0 otherwise, keeping records reproducible
  std::uint64_t seed = 0;

  bool operator==(const FederationConfig&) const = default;
};

// Throws InvalidArgument naming the offending field.
void validate(const FederationConfig& config);

struct ServerState {
  ParameterSet global_params;
  std::optional<ParameterSet> momentum_buffer;  // fedavgm only
  std::size_t round = 0;
  std::uint64_t rng_root = 0;
};

struct EwcAnchor {
  ParameterSet anchor_params;  // theta*
  ParameterSet fisher_diag;    // F, >= 0, zero on buffers
};

// Everything a client needs that is shared across the run.
struct TrainContext {
  const Dataset* dataset = nullptr;
  ModelSpec model_spec;
  FederationConfig config;
  LrSchedule schedule;  // resolved: total_steps and step_period in local steps
};

struct LocalResult {
  ParameterSet delta;  // trained - start
  std::size_t n = 0;   // |train_indices|
  std::size_t steps = 0;
  bool batch_clamped = false;  // batch_size exceeded the shard
};

// Mini-batches per epoch for n samples: ceil(n / b), with a trailing
// single-sample batch merged into its predecessor.
std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size);

// E epochs of local training from `start`. The client RNG is derived from
// (seed, round, client_id); the learning rate at local step j is
// lr_at(schedule, step_offset + j). `anchors` adds EWC penalties.
LocalResult local_train(const TrainContext& ctx, const ClientShard& shard, const ParameterSet& start,
                        std::size_t round, std::size_t client_id, std::size_t step_offset,
                        std::span<const EwcAnchor> anchors = {});

struct ClientUpdate {
  std::size_t client_id = 0;
  ParameterSet delta;
  std::size_t n = 0;
};

// sum(n_i * delta_i) / sum(n_i) in ascending client_id order, in double.
ParameterSet aggregate(std::vector<ClientUpdate> updates, bool equal_weights = false);

// beta == 0: w += d. beta > 0: v = beta * v + d; w += v (learned entries;
// buffers take d directly). The global model is kept float-representable.
void server_apply(ServerState& state, const ParameterSet& agg_delta, double beta);

// ||w_c - w_g|| / (||w_g|| + 1e-12) over learned parameters.
double weight_divergence(const ParameterSet& client_params, const ParameterSet& global_params);

// Samples ceil(fraction * K) of the K client slots, ascending.
std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction, std::uint64_t seed,
                                        std::size_t round);

// Diagonal Fisher of a model's own predictive distribution: labels are
// sampled from softmax(logits) and per-sample squared gradients of the
// log-likelihood are averaged. `logits_for(i)` must build a (1, C) graph over
// `params` for sample i; results follow the order of `params`.
std::vector<std::vector<double>> fisher_diagonal(std::span<NamedTensor> params, std::size_t num_samples,
                                                 const std::function<Tensor(std::size_t)>& logits_for, Rng& rng);
// Model form: up to fisher_batches * batch_size samples of the shard, eval mode.
ParameterSet fisher_estimate(Model& model, const Dataset& dataset, const ClientShard& shard,
                             std::size_t batches, std::size_t batch_size, Rng& rng);

struct RunResult {
  std::vector<RoundRecord> records;
  ForgettingTrace forgetting;  // serial algorithms only
  ParameterSet final_params;
  std::size_t param_count = 0;
  double mean_ks_used = 0.0;  // after any data sharing
  std::vector<std::size_t> participants_per_round;
  std::size_t clamped_batch_clients = 0;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

RunResult run_parallel(const FederationConfig& config, const PartitionReport& partition, const ModelSpec& model_spec,
                       const Dataset& dataset, const RoundCallback& on_round = {});
RunResult run_cwt(const FederationConfig& config, const PartitionReport& partition, const ModelSpec& model_spec,
                  const Dataset& dataset, const RoundCallback& on_round = {});
// Dispatches on config.algorithm.
RunResult run_federation(const FederationConfig& config, const PartitionReport& partition,
                         const ModelSpec& model_spec, const Dataset& dataset, const RoundCallback& on_round = {});

// Centralized baseline on `indices`: `rounds` segments of E epochs each, with
// the same batching, RNG streams and schedule as a single federated client
// (client id 0), so K = 1 federation reproduces it exactly.
RunResult train_centralized(const FederationConfig& config, const ModelSpec& model_spec, const Dataset& dataset,
                            std::vector<std::size_t> indices, const RoundCallback& on_round = {});

// Per-round local step budget of the parallel engine: E * max_i batches_per_epoch.
std::size_t parallel_steps_per_round(const FederationConfig& config, const std::vector<ClientShard>& shards);
// Schedule with total_steps and step_period in local steps.
LrSchedule resolve_schedule(const FederationConfig& config, std::size_t steps_per_round);

}  // namespace flsim
