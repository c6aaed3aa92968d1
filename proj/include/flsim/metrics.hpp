#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/models.hpp"

namespace flsim {

struct RoundRecord {
  std::size_t round = 0;  // 1-indexed
  double global_test_acc = 0.0;
  std::vector<double> per_client_val_acc;  // ascending client_id; empty without val splits
  std::uint64_t cumulative_transmitted_params = 0;
  double mean_weight_divergence = 0.0;
  std::int64_t wall_ms = 0;

  bool operator==(const RoundRecord&) const = default;
};

struct ForgettingRow {
  std::size_t visit = 0;  // 0-indexed over the whole run
  std::size_t round = 0;
  std::size_t trained_client = 0;
  std::vector<double> accuracy;  // per client val set, ascending client_id

  bool operator==(const ForgettingRow&) const = default;
};

struct ForgettingTrace {
  std::size_t num_clients = 0;
  std::vector<ForgettingRow> rows;

  bool operator==(const ForgettingTrace&) const = default;
};

// Argmax with ties resolved toward the lowest class id.
std::size_t argmax_lowest(std::span<const float> row);
// Fraction of rows of (N, C) logits whose argmax equals the label.
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);
// Eval-mode accuracy of `model` on the given samples; restores the mode.
double evaluate(Model& model, const Dataset& dataset, std::span<const std::size_t> indices,
                std::size_t batch_size = 256);

// Smallest 1-indexed round reaching target, or nullopt when never reached.
std::optional<std::size_t> rounds_to_target(std::span<const double> trace, double target);
std::string format_rounds(std::optional<std::size_t> rounds);  // "inf" when absent

// Headline accounting: rounds x model parameters.
std::uint64_t transmitted_size(std::uint64_t rounds, std::uint64_t param_count);
// Detailed accounting: uplink + downlink per participating client per round.
std::uint64_t transmitted_size_detailed(std::span<const std::size_t> participants_per_round,
                                        std::uint64_t param_count);

void record_forgetting(ForgettingTrace& trace, std::size_t round, std::size_t trained_client,
                       std::vector<double> accuracies);
// Largest accuracy loss on client c between the end of its own visit and the
// end of the following visit; 0 when c is never followed by another visit.
double forgetting_drop(const ForgettingTrace& trace, std::size_t client);

}  // namespace flsim
