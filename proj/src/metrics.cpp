#include "flsim/metrics.hpp"

#include <algorithm>

#include "flsim/error.hpp"

namespace flsim {

std::size_t argmax_lowest(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("accuracy", "expected (N, C) logits for " + std::to_string(labels.size()) + " labels, got " +
                                     shape_str(logits.shape()));
  if (labels.empty()) throw InvalidArgument("accuracy", "empty sample set");
  const std::size_t C = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.data().subspan(i * C, C);
    correct += static_cast<int>(argmax_lowest(row)) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(Model& model, const Dataset& dataset, std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw InvalidArgument("evaluate", "empty sample set");
  if (batch_size == 0) throw InvalidArgument("evaluate", "batch_size must be >= 1");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (std::size_t at = 0; at < indices.size(); at += batch_size) {
    const auto chunk = indices.subspan(at, std::min(batch_size, indices.size() - at));
    const Tensor logits = model.forward(dataset.batch(chunk));
    const std::size_t C = logits.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      correct += argmax_lowest(logits.data().subspan(i * C, C)) == dataset.labels[chunk[i]];
  }
  model.set_training(was_training);
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

std::optional<std::size_t> rounds_to_target(std::span<const double> trace, double target) {
  if (!(target > 0.0 && target <= 1.0)) throw InvalidArgument("rounds_to_target", "target must lie in (0, 1]");
  for (std::size_t r = 0; r < trace.size(); ++r)
    if (trace[r] >= target) return r + 1;
  return std::nullopt;
}

std::string format_rounds(std::optional<std::size_t> rounds) {
  return rounds ? std::to_string(*rounds) : "inf";
}

std::uint64_t transmitted_size(std::uint64_t rounds, std::uint64_t param_count) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(rounds, param_count, &out))
    throw InvalidArgument("transmitted_size", "overflow in rounds x param_count");
  return out;
}

std::uint64_t transmitted_size_detailed(std::span<const std::size_t> participants, std::uint64_t param_count) {
  std::uint64_t total = 0;
  for (auto p : participants) total += transmitted_size(2 * static_cast<std::uint64_t>(p), param_count);
  return total;
}

void record_forgetting(ForgettingTrace& trace, std::size_t round, std::size_t trained_client,
                       std::vector<double> accuracies) {
  if (accuracies.size() != trace.num_clients) {
    throw InvalidArgument("record_forgetting", "expected " + std::to_string(trace.num_clients) +
                                                   " accuracies, got " + std::to_string(accuracies.size()));
  }
  trace.rows.push_back({trace.rows.size(), round, trained_client, std::move(accuracies)});
}

double forgetting_drop(const ForgettingTrace& trace, std::size_t client) {
  if (client >= trace.num_clients) throw InvalidArgument("forgetting_drop", "client out of range");
  double drop = 0.0;
  for (std::size_t v = 0; v + 1 < trace.rows.size(); ++v) {
    if (trace.rows[v].trained_client != client) continue;
    drop = std::max(drop, trace.rows[v].accuracy[client] - trace.rows[v + 1].accuracy[client]);
  }
  return drop;
}

}  // namespace flsim
