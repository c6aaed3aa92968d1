#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "flsim/data.hpp"

namespace flsim {

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> label_histogram;  // over train_indices, one bin per class

  bool operator==(const ClientShard&) const = default;
};

struct PartitionReport {
  std::vector<ClientShard> shards;
  double mean_ks = 0.0;
  // Full pairwise matrix; left empty above kMaxPairwiseMatrix clients, where
  // only the mean is computed.
  std::vector<std::vector<double>> pairwise_ks;

  bool operator==(const PartitionReport&) const = default;
};

inline constexpr std::size_t kMaxPairwiseMatrix = 512;

// (class, fraction of that class's train samples)
using ClassShare = std::pair<std::size_t, double>;
using ClassAssignment = std::vector<std::vector<ClassShare>>;

PartitionReport partition_iid(const Dataset& dataset, std::size_t num_clients, std::uint64_t seed);

// Each client draws the requested fraction of each listed class without
// replacement. Counts are floor(fraction * n_class); when a class is fully
// assigned (fractions sum to 1), the last client listing it takes the remainder.
PartitionReport partition_label_skew(const Dataset& dataset, const ClassAssignment& assignment,
                                     std::uint64_t seed);

// One shard per train sample, no per-client validation split.
PartitionReport partition_edge_case(const Dataset& dataset);

// Contiguous class blocks; with more clients than classes each class is split
// evenly among consecutive clients.
ClassAssignment split3_assignment(std::size_t num_clients, std::size_t num_classes);
// Client 0 holds classes {0,1}; the others hold 4-class windows of stride 2
// over the remaining classes (cyclic). Shared classes are split evenly.
ClassAssignment split2_assignment(std::size_t num_clients, std::size_t num_classes);

double ks_statistic(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
// Mean over unordered pairs; 0 with fewer than two shards.
std::pair<double, std::vector<std::vector<double>>> ks_pairwise_mean(const std::vector<ClientShard>& shards);

// Each client contributes ceil(fraction * |train|) random train samples to a
// pool; every client then receives the pool samples it does not already hold.
std::vector<ClientShard> share_globally(const std::vector<ClientShard>& shards, const Dataset& dataset,
                                        double fraction, std::uint64_t seed);

// Per-client validation size: 10% of the shard, at least one sample, none
// for single-sample shards.
std::size_t client_val_size(std::size_t shard_size);

}  // namespace flsim
