#include "flsim/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "flsim/error.hpp"
#include "flsim/ops.hpp"

namespace flsim {

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;
constexpr std::uint64_t kShareStream = 0x7368617265ULL;
constexpr std::uint64_t kFisherStream = 0x666973686572ULL;

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ms(Clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - since).count();
}

std::vector<const ClientShard*> by_client_id(const std::vector<ClientShard>& shards) {
  std::vector<const ClientShard*> out;
  for (const auto& s : shards) out.push_back(&s);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i]->client_id == out[i - 1]->client_id)
      throw InvalidArgument("federation", "duplicate client_id " + std::to_string(out[i]->client_id));
  return out;
}

bool all_have_val(const std::vector<const ClientShard*>& shards) {
  return std::all_of(shards.begin(), shards.end(), [](auto* s) { return !s->val_indices.empty(); });
}

std::vector<double> client_val_accuracies(Model& model, const Dataset& d,
                                          const std::vector<const ClientShard*>& shards) {
  std::vector<double> out;
  for (auto* s : shards) out.push_back(evaluate(model, d, s->val_indices));
  return out;
}

double test_accuracy(Model& model, const Dataset& d) {
  const auto test = d.indices(Split::Test);
  if (test.empty()) throw InvalidArgument("federation", "dataset has no test split");
  return evaluate(model, d, test);
}

// start + delta, kept float-representable.
ParameterSet applied(const ParameterSet& start, const ParameterSet& delta) {
  ParameterSet out = start;
  axpy(out, 1.0, delta);
  out.round_to_float();
  return out;
}

void check_dataset_matches(const ModelSpec& spec, const Dataset& d) {
  if (d.channels != spec.channels || d.height != spec.image_size || d.width != spec.image_size ||
      d.num_classes != spec.num_classes) {
    throw InvalidArgument("federation", "model expects " + std::to_string(spec.channels) + "x" +
                                            std::to_string(spec.image_size) + "x" + std::to_string(spec.image_size) +
                                            " images with " + std::to_string(spec.num_classes) +
                                            " classes; dataset differs");
  }
}

// Adds `scale * F * (theta - anchor)` (or `scale * (theta - anchor)` without
// a Fisher) to the gradients of the learned parameters.
void add_quadratic_grad(std::vector<NamedTensor>& params, const ParameterSet& anchor, const ParameterSet* fisher,
                        double scale) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = anchor.entries()[i];
    const auto* f = fisher ? &fisher->entries()[i] : nullptr;
    auto data = params[i].tensor.data();
    auto grad = params[i].tensor.mutable_grad();
    for (std::size_t j = 0; j < grad.size(); ++j) {
      const double w = (f ? f->values[j] : 1.0) * scale;
      grad[j] = static_cast<float>(grad[j] + w * (static_cast<double>(data[j]) - a.values[j]));
    }
  }
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedAvgM: return "fedavgm";
    case Algorithm::FedProx: return "fedprox";
    case Algorithm::FedAvgShare: return "fedavg-share";
    case Algorithm::Cwt: return "cwt";
    case Algorithm::CwtEwc: return "cwt-ewc";
  }
  return "?";
}

std::optional<Algorithm> parse_algorithm(const std::string& name) {
  for (auto a : {Algorithm::FedAvg, Algorithm::FedAvgM, Algorithm::FedProx, Algorithm::FedAvgShare, Algorithm::Cwt,
                 Algorithm::CwtEwc})
    if (to_string(a) == name) return a;
  return std::nullopt;
}

void validate(const FederationConfig& c) {
  auto fail = [](const std::string& field, const std::string& what) {
    throw InvalidArgument("federation." + field, what);
  };
  if (c.local_epochs < 1) fail("local_epochs", "must be >= 1");
  if (c.rounds < 1) fail("rounds", "must be >= 1");
  if (!(c.sample_fraction > 0.0 && c.sample_fraction <= 1.0)) fail("sample_fraction", "must lie in (0, 1]");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(c.mu >= 0.0)) fail("mu", "must be >= 0");
  if (!(c.beta >= 0.0 && c.beta < 1.0)) fail("beta", "must lie in [0, 1)");
  if (!(c.share_fraction >= 0.0 && c.share_fraction <= 1.0)) fail("share_fraction", "must lie in [0, 1]");
  if (c.algorithm == Algorithm::FedAvgShare && !(c.share_fraction > 0.0))
    fail("share_fraction", "fedavg-share requires share_fraction > 0");
  if (!(c.lambda_ewc >= 0.0)) fail("lambda_ewc", "must be >= 0");
  if (c.fisher_batches < 1) fail("fisher_batches", "must be >= 1");
  if (c.clip_norm && !(*c.clip_norm > 0.0)) fail("clip_norm", "must be > 0 when set");
  if (!(c.schedule.base_lr > 0.0)) fail("schedule.base_lr", "must be > 0");
  if (c.step_period_rounds < 1) fail("schedule.step_period_rounds", "must be >= 1");
  if (!(c.schedule.step_factor > 0.0 && c.schedule.step_factor <= 1.0))
    fail("schedule.step_factor", "must lie in (0, 1]");
  const auto& o = c.optimizer;
  if (!(o.momentum >= 0.0f && o.momentum < 1.0f)) fail("optimizer.momentum", "must lie in [0, 1)");
  if (!(o.weight_decay >= 0.0f)) fail("optimizer.weight_decay", "must be >= 0");
  if (!(o.beta1 >= 0.0f && o.beta1 < 1.0f)) fail("optimizer.beta1", "must lie in [0, 1)");
  if (!(o.beta2 >= 0.0f && o.beta2 < 1.0f)) fail("optimizer.beta2", "must lie in [0, 1)");
  if (!(o.eps > 0.0f)) fail("optimizer.eps", "must be > 0");
  if (c.threads < 1) fail("threads", "must be >= 1");
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  if (n == 0) return 0;
  const std::size_t b = std::min(std::max<std::size_t>(batch_size, 1), n);
  const std::size_t q = n / b, r = n % b;
  return r == 0 || r == 1 ? q : q + 1;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  if (order.empty()) return out;
  const std::size_t b = std::min(std::max<std::size_t>(batch_size, 1), order.size());
  for (std::size_t at = 0; at < order.size(); at += b)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(at + b, order.size())));
  if (out.size() >= 2 && out.back().size() == 1 && b > 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

LocalResult local_train(const TrainContext& ctx, const ClientShard& shard, const ParameterSet& start,
                        std::size_t round, std::size_t client_id, std::size_t step_offset,
                        std::span<const EwcAnchor> anchors) {
  const auto& cfg = ctx.config;
  if (cfg.local_epochs < 1) throw InvalidArgument("local_train", "local_epochs must be >= 1");
  if (shard.train_indices.empty())
    throw InvalidArgument("local_train", "client " + std::to_string(client_id) + " has no training samples");
  const Dataset& data = *ctx.dataset;

  Model model = Model::build(ctx.model_spec, 0);
  model.load(start);
  model.set_training(true);
  auto& params = model.parameters();
  const bool prox = (cfg.algorithm == Algorithm::FedProx) && cfg.mu > 0.0;
  const bool ewc = cfg.algorithm == Algorithm::CwtEwc && cfg.lambda_ewc > 0.0 && !anchors.empty();

  LocalResult out;
  out.n = shard.train_indices.size();
  out.batch_clamped = cfg.batch_size > out.n;
  Rng rng = Rng::derive(cfg.seed, round, client_id);
  Optimizer optimizer(cfg.optimizer);
  auto order = shard.train_indices;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      model.zero_grad();
      const Tensor logits = model.forward(data.batch(batch));
      const auto labels = data.batch_labels(batch);
      Tensor loss = ops::cross_entropy(logits, labels);
      loss.backward();
      if (prox) add_quadratic_grad(params, start, nullptr, cfg.mu);
      if (ewc)
        for (const auto& a : anchors) add_quadratic_grad(params, a.anchor_params, &a.fisher_diag, cfg.lambda_ewc);
      if (cfg.clip_norm) clip_global_norm(params, *cfg.clip_norm);
      const std::size_t step = std::min(step_offset + out.steps, ctx.schedule.total_steps);
      optimizer.step(params, static_cast<float>(lr_at(ctx.schedule, step)));
      ++out.steps;
    }
  }
  out.delta = difference(model.state(), start);
  return out;
}

ParameterSet aggregate(std::vector<ClientUpdate> updates, bool equal_weights) {
  if (updates.empty()) throw InvalidArgument("aggregate", "no client updates");
  std::sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  for (const auto& u : updates) require_same_layout("aggregate", updates.front().delta, u.delta);
  if (updates.size() == 1) return std::move(updates.front().delta);
  ParameterSet acc = zeros_like(updates.front().delta);
  double total = 0.0;
  for (const auto& u : updates) {
    const double w = equal_weights ? 1.0 : static_cast<double>(u.n);
    axpy(acc, w, u.delta);
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("aggregate", "total weight is zero");
  for (auto& e : acc.entries())
    for (auto& v : e.values) v /= total;
  return acc;
}

void server_apply(ServerState& state, const ParameterSet& d, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("server_apply", "beta must lie in [0, 1)");
  require_same_layout("server_apply", state.global_params, d);
  if (beta == 0.0) {
    axpy(state.global_params, 1.0, d);
  } else {
    if (!state.momentum_buffer) state.momentum_buffer = zeros_like(state.global_params);
    auto& v = state.momentum_buffer->entries();
    auto& w = state.global_params.entries();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto& di = d.entries()[i].values;
      for (std::size_t j = 0; j < di.size(); ++j) {
        if (w[i].buffer) {
          w[i].values[j] += di[j];
        } else {
          v[i].values[j] = beta * v[i].values[j] + di[j];
          w[i].values[j] += v[i].values[j];
        }
      }
    }
  }
  state.global_params.round_to_float();
  ++state.round;
}

double weight_divergence(const ParameterSet& client, const ParameterSet& global) {
  return l2_norm(difference(client, global)) / (l2_norm(global) + 1e-12);
}

std::vector<std::size_t> sample_clients(std::size_t K, double fraction, std::uint64_t seed, std::size_t round) {
  if (K == 0) throw InvalidArgument("sample_clients", "no clients");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("sample_clients", "fraction must lie in (0, 1]");
  const auto m = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(K) - 1e-9)), 1, K);
  std::vector<std::size_t> slots(K);
  for (std::size_t i = 0; i < K; ++i) slots[i] = i;
  if (m == K) return slots;
  Rng rng = Rng::derive(seed, round, kSampleStream);
  for (std::size_t i = 0; i < m; ++i) std::swap(slots[i], slots[i + rng.below(K - i)]);
  slots.resize(m);
  std::sort(slots.begin(), slots.end());
  return slots;
}

std::vector<std::vector<double>> fisher_diagonal(std::span<NamedTensor> params, std::size_t num_samples,
                                                 const std::function<Tensor(std::size_t)>& logits_for, Rng& rng) {
  if (num_samples == 0) throw InvalidArgument("fisher_estimate", "no samples");
  std::vector<std::vector<double>> fisher;
  for (const auto& p : params) fisher.emplace_back(p.tensor.numel(), 0.0);
  for (std::size_t i = 0; i < num_samples; ++i) {
    for (auto& p : params) p.tensor.zero_grad();
    const Tensor logits = logits_for(i);
    if (logits.rank() != 2 || logits.dim(0) != 1)
      throw ShapeError("fisher_estimate", "expected (1, C) logits, got " + shape_str(logits.shape()));
    // Draw a label from the model's own predictive distribution.
    const auto row = logits.data();
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> prob(row.size());
    double z = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) z += prob[c] = std::exp(row[c] - mx);
    double u = rng.uniform() * z;
    int label = static_cast<int>(row.size()) - 1;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (u < prob[c]) {
        label = static_cast<int>(c);
        break;
      }
      u -= prob[c];
    }
    const int labels[1] = {label};
    Tensor nll = ops::cross_entropy(logits, labels);
    nll.backward();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto g = params[k].tensor.grad();
      for (std::size_t j = 0; j < g.size(); ++j) fisher[k][j] += static_cast<double>(g[j]) * g[j];
    }
  }
  for (auto& f : fisher)
    for (auto& v : f) v /= static_cast<double>(num_samples);
  return fisher;
}

ParameterSet fisher_estimate(Model& model, const Dataset& dataset, const ClientShard& shard, std::size_t batches,
                             std::size_t batch_size, Rng& rng) {
  if (batches < 1) throw InvalidArgument("fisher_estimate", "batches must be >= 1");
  if (shard.train_indices.empty()) throw InvalidArgument("fisher_estimate", "empty shard");
  auto order = shard.train_indices;
  rng.shuffle(order);
  order.resize(std::min(order.size(), batches * std::max<std::size_t>(batch_size, 1)));
  const bool was_training = model.training();
  model.set_training(false);
  auto fisher = fisher_diagonal(model.parameters(), order.size(), [&](std::size_t i) {
    const std::size_t idx[1] = {order[i]};
    return model.forward(dataset.batch(idx));
  }, rng);
  model.set_training(was_training);
  model.zero_grad();
  ParameterSet out = zeros_like(model.state());
  for (std::size_t k = 0; k < fisher.size(); ++k) out.entries()[k].values = std::move(fisher[k]);
  return out;
}

std::size_t parallel_steps_per_round(const FederationConfig& config, const std::vector<ClientShard>& shards) {
  std::size_t most = 0;
  for (const auto& s : shards) most = std::max(most, batches_per_epoch(s.train_indices.size(), config.batch_size));
  return config.local_epochs * most;
}

LrSchedule resolve_schedule(const FederationConfig& config, std::size_t steps_per_round) {
  LrSchedule s = config.schedule;
  s.total_steps = config.rounds * steps_per_round;
  s.step_period = config.step_period_rounds * steps_per_round;
  validate(s);
  return s;
}

RunResult run_parallel(const FederationConfig& config, const PartitionReport& partition, const ModelSpec& spec,
                       const Dataset& dataset, const RoundCallback& on_round) {
  validate(config);
  check_dataset_matches(spec, dataset);
  if (is_serial(config.algorithm)) throw InvalidArgument("run_parallel", "serial algorithm " + to_string(config.algorithm));
  std::vector<ClientShard> owned = partition.shards;
  double mean_ks = partition.mean_ks;
  if (config.algorithm == Algorithm::FedAvgShare && config.share_fraction > 0.0) {
    owned = share_globally(owned, dataset, config.share_fraction, splitmix64(config.seed ^ kShareStream));
    mean_ks = ks_pairwise_mean(owned).first;
  }
  const auto shards = by_client_id(owned);
  const std::size_t K = shards.size();
  if (K == 0) throw InvalidArgument("run_parallel", "partition has no clients");

  TrainContext ctx{&dataset, spec, config, {}};
  const std::size_t S = parallel_steps_per_round(config, owned);
  ctx.schedule = resolve_schedule(config, S);

  Model eval_model = Model::build(spec, config.seed);
  ServerState state{eval_model.state(), std::nullopt, 0, config.seed};
  RunResult result;
  result.param_count = eval_model.param_count();
  result.mean_ks_used = mean_ks;
  const bool with_val = all_have_val(shards);
  const double beta = config.algorithm == Algorithm::FedAvgM ? config.beta : 0.0;
  std::vector<bool> clamped(K, false);

  for (std::size_t r = 0; r < config.rounds; ++r) {
    const auto t0 = Clock::now();
    const auto sampled = sample_clients(K, config.sample_fraction, config.seed, r);
    std::vector<LocalResult> local(sampled.size());
    std::vector<std::exception_ptr> errors(sampled.size());
    auto work = [&](std::size_t slot) {
      try {
        const auto* s = shards[sampled[slot]];
        local[slot] = local_train(ctx, *s, state.global_params, r, s->client_id, r * S);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(config.threads, sampled.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < sampled.size(); ++i) work(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < sampled.size();) work(i);
        });
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    std::vector<ClientUpdate> updates;
    double divergence = 0.0;
    for (std::size_t i = 0; i < sampled.size(); ++i) {
      const auto* s = shards[sampled[i]];
      divergence += l2_norm(local[i].delta) / (l2_norm(state.global_params) + 1e-12);
      if (local[i].batch_clamped) clamped[sampled[i]] = true;
      updates.push_back({s->client_id, std::move(local[i].delta), local[i].n});
    }
    server_apply(state, aggregate(std::move(updates), config.equal_weights), beta);

    eval_model.load(state.global_params);
    RoundRecord rec;
    rec.round = r + 1;
    rec.global_test_acc = test_accuracy(eval_model, dataset);
    if (with_val) rec.per_client_val_acc = client_val_accuracies(eval_model, dataset, shards);
    rec.cumulative_transmitted_params = transmitted_size(r + 1, result.param_count);
    rec.mean_weight_divergence = divergence / static_cast<double>(sampled.size());
    rec.wall_ms = config.record_wall_time ? elapsed_ms(t0) : 0;
    result.participants_per_round.push_back(sampled.size());
    if (on_round) on_round(rec);
    result.records.push_back(std::move(rec));
  }
  result.final_params = std::move(state.global_params);
  result.clamped_batch_clients = static_cast<std::size_t>(std::count(clamped.begin(), clamped.end(), true));
  return result;
}

RunResult run_cwt(const FederationConfig& config, const PartitionReport& partition, const ModelSpec& spec,
                  const Dataset& dataset, const RoundCallback& on_round) {
  validate(config);
  check_dataset_matches(spec, dataset);
  if (!is_serial(config.algorithm)) throw InvalidArgument("run_cwt", "parallel algorithm " + to_string(config.algorithm));
  const auto shards = by_client_id(partition.shards);
  const std::size_t K = shards.size();
  if (K == 0) throw InvalidArgument("run_cwt", "partition has no clients");

  TrainContext ctx{&dataset, spec, config, {}};
  std::vector<std::size_t> offsets;  // local steps before each client within a cycle
  std::size_t S = 0;
  for (auto* s : shards) {
    offsets.push_back(S);
    S += config.local_epochs * batches_per_epoch(s->train_indices.size(), config.batch_size);
  }
  ctx.schedule = resolve_schedule(config, S);

  Model model = Model::build(spec, config.seed);
  ParameterSet params = model.state();
  RunResult result;
  result.param_count = model.param_count();
  result.mean_ks_used = partition.mean_ks;
  const bool with_val = all_have_val(shards);
  result.forgetting.num_clients = with_val ? K : 0;
  const bool ewc = config.algorithm == Algorithm::CwtEwc && config.lambda_ewc > 0.0;
  std::vector<std::optional<EwcAnchor>> anchor_slots(K);
  std::size_t clamped = 0;

  for (std::size_t r = 0; r < config.rounds; ++r) {
    const auto t0 = Clock::now();
    if (!config.accumulate_across_cycles) std::fill(anchor_slots.begin(), anchor_slots.end(), std::nullopt);
    double divergence = 0.0;
    std::vector<double> val_acc;
    for (std::size_t i = 0; i < K; ++i) {
      const auto* s = shards[i];
      std::vector<EwcAnchor> anchors;
      for (const auto& a : anchor_slots)
        if (a) anchors.push_back(*a);
      auto local = local_train(ctx, *s, params, r, s->client_id, r * S + offsets[i], anchors);
      if (r == 0 && local.batch_clamped) ++clamped;
      divergence += l2_norm(local.delta) / (l2_norm(params) + 1e-12);
      params = applied(params, local.delta);
      model.load(params);
      if (ewc) {
        Rng rng = Rng::derive(config.seed, r, kFisherStream + s->client_id);
        anchor_slots[i] = EwcAnchor{params, fisher_estimate(model, dataset, *s, config.fisher_batches,
                                                            std::min(config.batch_size, s->train_indices.size()), rng)};
      }
      if (with_val) {
        val_acc = client_val_accuracies(model, dataset, shards);
        record_forgetting(result.forgetting, r + 1, s->client_id, val_acc);
      }
    }
    RoundRecord rec;
    rec.round = r + 1;
    rec.global_test_acc = test_accuracy(model, dataset);
    rec.per_client_val_acc = val_acc;
    rec.cumulative_transmitted_params = transmitted_size(r + 1, result.param_count);
    rec.mean_weight_divergence = divergence / static_cast<double>(K);
    rec.wall_ms = config.record_wall_time ? elapsed_ms(t0) : 0;
    result.participants_per_round.push_back(K);
    if (on_round) on_round(rec);
    result.records.push_back(std::move(rec));
  }
  result.final_params = std::move(params);
  result.clamped_batch_clients = clamped;
  return result;
}

RunResult run_federation(const FederationConfig& config, const PartitionReport& partition, const ModelSpec& spec,
                         const Dataset& dataset, const RoundCallback& on_round) {
  return is_serial(config.algorithm) ? run_cwt(config, partition, spec, dataset, on_round)
                                     : run_parallel(config, partition, spec, dataset, on_round);
}

RunResult train_centralized(const FederationConfig& config, const ModelSpec& spec, const Dataset& dataset,
                            std::vector<std::size_t> indices, const RoundCallback& on_round) {
  validate(config);
  check_dataset_matches(spec, dataset);
  ClientShard shard;
  shard.client_id = 0;
  shard.train_indices = std::move(indices);
  if (shard.train_indices.empty()) throw InvalidArgument("train_centralized", "no training samples");
  FederationConfig plain = config;
  plain.algorithm = Algorithm::FedAvg;
  TrainContext ctx{&dataset, spec, plain, {}};
  const std::size_t S = config.local_epochs * batches_per_epoch(shard.train_indices.size(), config.batch_size);
  ctx.schedule = resolve_schedule(plain, S);

  Model model = Model::build(spec, config.seed);
  ParameterSet params = model.state();
  RunResult result;
  result.param_count = model.param_count();
  for (std::size_t r = 0; r < config.rounds; ++r) {
    const auto t0 = Clock::now();
    const auto local = local_train(ctx, shard, params, r, 0, r * S);
    params = applied(params, local.delta);
    model.load(params);
    RoundRecord rec;
    rec.round = r + 1;
    rec.global_test_acc = test_accuracy(model, dataset);
    rec.wall_ms = config.record_wall_time ? elapsed_ms(t0) : 0;
    if (on_round) on_round(rec);
    result.records.push_back(std::move(rec));
  }
  result.final_params = std::move(params);
  return result;
}

}  // namespace flsim
