#include "flsim/partition.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flsim/error.hpp"
#include "flsim/rng.hpp"

namespace flsim {

namespace {

constexpr std::uint64_t kShuffleStream = 0x7061727469ULL;
constexpr std::uint64_t kValStream = 0x76616cULL;
constexpr std::uint64_t kShareStream = 0x7368617265ULL;

std::vector<std::size_t> histogram(const Dataset& d, const std::vector<std::size_t>& idx) {
  return d.class_counts(idx);
}

// Carves the per-client validation split off a shuffled member list.
ClientShard make_shard(const Dataset& d, std::size_t client_id, std::vector<std::size_t> members,
                       std::uint64_t seed, bool carve_val) {
  ClientShard s;
  s.client_id = client_id;
  std::sort(members.begin(), members.end());
  if (carve_val) {
    // Stratified carve: systematic sampling over the class-sorted shard.
    Rng rng = Rng::derive(seed, kValStream, client_id);
    rng.shuffle(members);
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return d.labels[a] < d.labels[b]; });
    const std::size_t n = members.size(), n_val = client_val_size(n);
    std::vector<bool> is_val(n, false);
    for (std::size_t j = 0; j < n_val; ++j) is_val[(2 * j + 1) * n / (2 * n_val)] = true;
    for (std::size_t j = 0; j < n; ++j) (is_val[j] ? s.val_indices : s.train_indices).push_back(members[j]);
    std::sort(s.val_indices.begin(), s.val_indices.end());
    std::sort(s.train_indices.begin(), s.train_indices.end());
  } else {
    s.train_indices = std::move(members);
  }
  s.label_histogram = histogram(d, s.train_indices);
  return s;
}

PartitionReport finish(std::vector<ClientShard> shards) {
  PartitionReport r;
  r.shards = std::move(shards);
  std::tie(r.mean_ks, r.pairwise_ks) = ks_pairwise_mean(r.shards);
  return r;
}

}  // namespace

std::size_t client_val_size(std::size_t n) {
  if (n < 2) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
}

PartitionReport partition_iid(const Dataset& d, std::size_t K, std::uint64_t seed) {
  auto train = d.indices(Split::Train);
  if (K < 1) throw InvalidArgument("partition_iid", "num_clients must be >= 1");
  if (K > train.size()) {
    throw InvalidArgument("partition_iid", "num_clients " + std::to_string(K) + " exceeds train size " +
                                               std::to_string(train.size()));
  }
  Rng rng = Rng::derive(seed, kShuffleStream);
  rng.shuffle(train);
  std::vector<ClientShard> shards;
  std::size_t at = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t n = train.size() / K + (k < train.size() % K ? 1 : 0);
    std::vector<std::size_t> members(train.begin() + static_cast<std::ptrdiff_t>(at),
                                     train.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
    shards.push_back(make_shard(d, k, std::move(members), seed, true));
  }
  return finish(std::move(shards));
}

PartitionReport partition_label_skew(const Dataset& d, const ClassAssignment& assignment, std::uint64_t seed) {
  if (assignment.empty()) throw InvalidArgument("partition_label_skew", "no clients assigned");
  const std::size_t C = d.num_classes;
  std::vector<double> total(C, 0.0);
  std::vector<std::size_t> last_client(C, 0);
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    for (const auto& [cls, frac] : assignment[k]) {
      if (cls >= C) {
        throw InvalidArgument("partition_label_skew", "client " + std::to_string(k) + " assigned class " +
                                                          std::to_string(cls) + " >= num_classes");
      }
      if (!(frac >= 0.0 && frac <= 1.0)) {
        throw InvalidArgument("partition_label_skew", "fraction must lie in [0, 1]");
      }
      total[cls] += frac;
      last_client[cls] = k;
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (total[c] > 1.0 + 1e-9) {
      throw InvalidArgument("partition_label_skew",
                            "class " + std::to_string(c) + " oversubscribed: fractions sum to " + std::to_string(total[c]));
    }
  }

  const auto train = d.indices(Split::Train);
  std::vector<std::vector<std::size_t>> by_class(C);
  for (auto i : train) by_class[d.labels[i]].push_back(i);
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng = Rng::derive(seed, kShuffleStream, c);
    rng.shuffle(by_class[c]);
  }

  std::vector<std::size_t> cursor(C, 0);
  std::vector<std::vector<std::size_t>> members(assignment.size());
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    for (const auto& [cls, frac] : assignment[k]) {
      const auto& pool = by_class[cls];
      std::size_t n = static_cast<std::size_t>(std::floor(frac * static_cast<double>(pool.size()) + 1e-9));
      if (k == last_client[cls] && total[cls] >= 1.0 - 1e-9) n = pool.size() - cursor[cls];
      n = std::min(n, pool.size() - cursor[cls]);
      members[k].insert(members[k].end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor[cls]),
                        pool.begin() + static_cast<std::ptrdiff_t>(cursor[cls] + n));
      cursor[cls] += n;
    }
  }
  std::vector<ClientShard> shards;
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    if (members[k].empty()) {
      throw InvalidArgument("partition_label_skew", "client " + std::to_string(k) + " received no samples");
    }
    shards.push_back(make_shard(d, k, std::move(members[k]), seed, true));
  }
  return finish(std::move(shards));
}

PartitionReport partition_edge_case(const Dataset& d) {
  const auto train = d.indices(Split::Train);
  std::vector<ClientShard> shards;
  shards.reserve(train.size());
  for (std::size_t k = 0; k < train.size(); ++k) shards.push_back(make_shard(d, k, {train[k]}, 0, false));
  return finish(std::move(shards));
}

namespace {

ClassAssignment even_fractions(std::vector<std::vector<std::size_t>> classes, std::size_t C) {
  std::vector<std::size_t> occurrences(C, 0);
  for (const auto& list : classes)
    for (auto c : list) ++occurrences[c];
  ClassAssignment out(classes.size());
  for (std::size_t k = 0; k < classes.size(); ++k)
    for (auto c : classes[k]) out[k].emplace_back(c, 1.0 / static_cast<double>(occurrences[c]));
  return out;
}

}  // namespace

ClassAssignment split3_assignment(std::size_t K, std::size_t C) {
  if (K < 1 || C < 1) throw InvalidArgument("split3", "need at least one client and one class");
  std::vector<std::vector<std::size_t>> classes(K);
  if (C >= K) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = k * C / K; c < (k + 1) * C / K; ++c) classes[k].push_back(c);
  } else {
    for (std::size_t k = 0; k < K; ++k) classes[k].push_back(k * C / K);
  }
  return even_fractions(std::move(classes), C);
}

ClassAssignment split2_assignment(std::size_t K, std::size_t C) {
  if (K < 1 || C < 2) throw InvalidArgument("split2", "need at least one client and two classes");
  std::vector<std::vector<std::size_t>> classes(K);
  classes[0] = {0, 1};
  // Remaining classes, or all classes when there are none left.
  std::vector<std::size_t> rest;
  for (std::size_t c = (C > 2 ? 2 : 0); c < C; ++c) rest.push_back(c);
  const std::size_t window = std::min<std::size_t>(4, rest.size());
  for (std::size_t k = 1; k < K; ++k)
    for (std::size_t j = 0; j < window; ++j) classes[k].push_back(rest[(2 * (k - 1) + j) % rest.size()]);
  return even_fractions(std::move(classes), C);
}

double ks_statistic(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw InvalidArgument("ks_statistic", "histograms differ in class count");
  double na = 0.0, nb = 0.0;
  for (auto v : a) na += static_cast<double>(v);
  for (auto v : b) nb += static_cast<double>(v);
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("ks_statistic", "empty label histogram");
  double ca = 0.0, cb = 0.0, ks = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    ca += static_cast<double>(a[c]);
    cb += static_cast<double>(b[c]);
    ks = std::max(ks, std::abs(ca / na - cb / nb));
  }
  return ks;
}

std::pair<double, std::vector<std::vector<double>>> ks_pairwise_mean(const std::vector<ClientShard>& shards) {
  const std::size_t K = shards.size();
  if (K < 2) return {0.0, {}};
  for (const auto& s : shards) {
    bool empty = true;
    for (auto v : s.label_histogram) empty = empty && v == 0;
    if (empty) throw InvalidArgument("ks_pairwise_mean", "client " + std::to_string(s.client_id) + " has an empty label histogram");
  }
  const double pairs = static_cast<double>(K) * static_cast<double>(K - 1) / 2.0;
  if (K <= kMaxPairwiseMatrix) {
    std::vector<std::vector<double>> m(K, std::vector<double>(K, 0.0));
    double sum = 0.0;
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = i + 1; j < K; ++j) {
        m[i][j] = m[j][i] = ks_statistic(shards[i].label_histogram, shards[j].label_histogram);
        sum += m[i][j];
      }
    return {sum / pairs, std::move(m)};
  }
  // Group clients with identical label distributions; KS within a group is 0.
  std::map<std::vector<double>, std::pair<std::size_t, std::size_t>> groups;  // dist -> (count, representative)
  for (std::size_t i = 0; i < K; ++i) {
    const auto& h = shards[i].label_histogram;
    double n = 0.0;
    for (auto v : h) n += static_cast<double>(v);
    std::vector<double> dist(h.size());
    for (std::size_t c = 0; c < h.size(); ++c) dist[c] = static_cast<double>(h[c]) / n;
    auto [it, inserted] = groups.try_emplace(std::move(dist), 0, i);
    ++it->second.first;
  }
  std::vector<std::pair<std::size_t, std::size_t>> reps;
  for (const auto& [dist, g] : groups) reps.push_back(g);
  double sum = 0.0;
  for (std::size_t i = 0; i < reps.size(); ++i)
    for (std::size_t j = i + 1; j < reps.size(); ++j)
      sum += static_cast<double>(reps[i].first) * static_cast<double>(reps[j].first) *
             ks_statistic(shards[reps[i].second].label_histogram, shards[reps[j].second].label_histogram);
  return {sum / pairs, {}};
}

std::vector<ClientShard> share_globally(const std::vector<ClientShard>& shards, const Dataset& d, double fraction,
                                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("share_globally", "fraction must lie in [0, 1]");
  if (fraction == 0.0) return shards;
  std::vector<std::vector<std::size_t>> contributed(shards.size());
  std::vector<std::size_t> pool;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    auto members = shards[k].train_indices;
    const auto n = std::min(members.size(), static_cast<std::size_t>(
                                                std::ceil(fraction * static_cast<double>(members.size()) - 1e-9)));
    Rng rng = Rng::derive(seed, kShareStream, shards[k].client_id);
    rng.shuffle(members);
    contributed[k].assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(contributed[k].begin(), contributed[k].end());
    pool.insert(pool.end(), contributed[k].begin(), contributed[k].end());
  }
  std::sort(pool.begin(), pool.end());
  std::vector<ClientShard> out = shards;
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::vector<std::size_t> received;
    std::set_difference(pool.begin(), pool.end(), contributed[k].begin(), contributed[k].end(),
                        std::back_inserter(received));
    out[k].train_indices.insert(out[k].train_indices.end(), received.begin(), received.end());
    out[k].label_histogram = histogram(d, out[k].train_indices);
  }
  return out;
}

}  // namespace flsim
