#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "flsim/error.hpp"
#include "flsim/partition.hpp"
#include "flsim/rng.hpp"

using namespace flsim;

namespace {

Dataset make_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.samples_per_class = per_class;
  s.height = 2;
  s.width = 2;
  s.seed = seed;
  return generate_synthetic(s);
}

// Independent KS: explicit CDF arrays, then max |difference|.
double reference_ks(const std::vector<double>& pa, const std::vector<double>& pb) {
  std::vector<double> fa(pa.size()), fb(pb.size());
  std::partial_sum(pa.begin(), pa.end(), fa.begin());
  std::partial_sum(pb.begin(), pb.end(), fb.begin());
  double m = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) m = std::max(m, std::abs(fa[i] - fb[i]));
  return m;
}

void check_complete(const Dataset& d, const PartitionReport& r) {
  std::vector<std::size_t> all;
  for (const auto& s : r.shards) {
    std::set<std::size_t> train(s.train_indices.begin(), s.train_indices.end());
    for (auto v : s.val_indices) CHECK(train.count(v) == 0);
    CHECK(d.class_counts(s.train_indices) == s.label_histogram);
    all.insert(all.end(), s.train_indices.begin(), s.train_indices.end());
    all.insert(all.end(), s.val_indices.begin(), s.val_indices.end());
  }
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());  // disjoint
  CHECK(all == d.indices(Split::Train));
}

void check_mean_matches_matrix(const PartitionReport& r) {
  const auto K = r.shards.size();
  REQUIRE(r.pairwise_ks.size() == K);
  double sum = 0.0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) sum += r.pairwise_ks[i][j];
  CHECK(r.mean_ks == doctest::Approx(sum / (K * (K - 1) / 2.0)).epsilon(1e-12));
}

}  // namespace

TEST_CASE("ks statistic oracle") {
  // A uniform on {0,9}, B uniform on {1,2}: CDF gap peaks at 0.5.
  std::vector<std::size_t> a(10, 0), b(10, 0);
  a[0] = a[9] = 3;
  b[1] = b[2] = 7;
  CHECK(ks_statistic(a, b) == 0.5);
  CHECK(reference_ks({.5, 0, 0, 0, 0, 0, 0, 0, 0, .5}, {0, .5, .5, 0, 0, 0, 0, 0, 0, 0}) == 0.5);
  CHECK(ks_statistic(a, a) == 0.0);
  // Disjoint contiguous blocks are maximally apart.
  std::vector<std::size_t> lo{4, 4, 0, 0}, hi{0, 0, 1, 9};
  CHECK(ks_statistic(lo, hi) == 1.0);
  CHECK_THROWS_AS(ks_statistic(lo, std::vector<std::size_t>(4, 0)), InvalidArgument);
}

TEST_CASE("ks statistic agrees with the reference on random histograms") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> a(7), b(7);
    for (auto& v : a) v = rng.below(5);
    for (auto& v : b) v = rng.below(5);
    a[0] += 1;
    b[6] += 1;
    std::vector<double> pa(7), pb(7);
    double na = 0, nb = 0;
    for (int i = 0; i < 7; ++i) na += a[i], nb += b[i];
    for (int i = 0; i < 7; ++i) pa[i] = a[i] / na, pb[i] = b[i] / nb;
    const double ks = ks_statistic(a, b);
    CHECK(ks == doctest::Approx(reference_ks(pa, pb)).epsilon(1e-12));
    CHECK(ks >= 0.0);
    CHECK(ks <= 1.0);
  }
}

TEST_CASE("label skew {0,9} vs {1,2} gives pairwise KS 0.5") {
  const auto d = make_dataset(10, 100);
  const auto r = partition_label_skew(d, {{{0, 1.0}, {9, 1.0}}, {{1, 1.0}, {2, 1.0}}}, 0);
  // The stratified val carve keeps both classes balanced within each shard.
  CHECK(r.shards[0].label_histogram[0] == r.shards[0].label_histogram[9]);
  CHECK(r.pairwise_ks[0][1] == 0.5);
  CHECK(r.mean_ks == 0.5);
}

TEST_CASE("split3 preset reaches KS exactly 1") {
  const auto d = make_dataset(10, 40);
  const auto a = split3_assignment(5, 10);
  REQUIRE(a.size() == 5);
  CHECK(a[0] == std::vector<ClassShare>{{0, 1.0}, {1, 1.0}});
  CHECK(a[4] == std::vector<ClassShare>{{8, 1.0}, {9, 1.0}});
  const auto r = partition_label_skew(d, a, 7);
  CHECK(r.mean_ks == 1.0);
  check_complete(d, r);
  check_mean_matches_matrix(r);
}

TEST_CASE("split2 preset pattern") {
  const auto a = split2_assignment(5, 10);
  CHECK(a[0].size() == 2);
  for (std::size_t k = 1; k < 5; ++k) CHECK(a[k].size() == 4);
  std::vector<double> total(10, 0.0);
  for (const auto& list : a)
    for (const auto& [c, f] : list) total[c] += f;
  for (double t : total) CHECK(t == doctest::Approx(1.0));
  const auto d = make_dataset(10, 40);
  const auto r = partition_label_skew(d, a, 1);
  check_complete(d, r);
  CHECK(r.mean_ks > 0.0);
  CHECK(r.mean_ks < 1.0);
  // Binary labels with more clients than classes still produce a valid plan.
  const auto d2 = make_dataset(2, 100);
  check_complete(d2, partition_label_skew(d2, split2_assignment(4, 2), 0));
  check_complete(d2, partition_label_skew(d2, split3_assignment(4, 2), 0));
}

TEST_CASE("identical assignments give KS 0") {
  const auto d = make_dataset(4, 40);
  ClassAssignment a(4);
  for (auto& list : a)
    for (std::size_t c = 0; c < 4; ++c) list.emplace_back(c, 0.25);
  const auto r = partition_label_skew(d, a, 0);
  check_complete(d, r);
  // Shard histograms are equal before the val carve; after it KS stays small.
  CHECK(r.mean_ks < 0.15);
}

TEST_CASE("oversubscribed or invalid assignments are rejected") {
  const auto d = make_dataset(4, 10);
  CHECK_THROWS_AS(partition_label_skew(d, {{{0, 0.6}}, {{0, 0.6}}}, 0), InvalidArgument);
  CHECK_THROWS_AS(partition_label_skew(d, {{{4, 0.5}}}, 0), InvalidArgument);
  CHECK_THROWS_AS(partition_label_skew(d, {{{0, -0.1}}}, 0), InvalidArgument);
  CHECK_THROWS_AS(partition_label_skew(d, {}, 0), InvalidArgument);
}

TEST_CASE("iid partition") {
  const auto d = make_dataset(10, 10);
  const auto one = partition_iid(d, 1, 0);
  CHECK(one.shards.size() == 1);
  CHECK(one.mean_ks == 0.0);
  check_complete(d, one);
  CHECK(partition_iid(d, 5, 3) == partition_iid(d, 5, 3));
  CHECK_THROWS_AS(partition_iid(d, d.indices(Split::Train).size() + 1, 0), InvalidArgument);
  CHECK_THROWS_AS(partition_iid(d, 0, 0), InvalidArgument);

  const auto r = partition_iid(d, 3, 0);
  check_complete(d, r);
  for (const auto& s : r.shards) {
    const auto n = s.train_indices.size() + s.val_indices.size();
    CHECK(s.val_indices.size() == client_val_size(n));
    CHECK(s.val_indices.size() >= 1);
  }
}

TEST_CASE("iid partition of 1000 samples into 5 clients has mean KS < 0.1") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SyntheticSpec s;
    s.num_classes = 10;
    s.samples_per_class = 100;
    s.height = 1;
    s.width = 1;
    s.train_fraction = 1.0;
    s.val_fraction = 0.0;
    const auto d = generate_synthetic(s);
    const auto r = partition_iid(d, 5, seed);
    check_mean_matches_matrix(r);
    worst = std::max(worst, r.mean_ks);
  }
  CHECK(worst < 0.1);
}

TEST_CASE("edge case: one client per train sample") {
  const auto d = make_dataset(3, 20);
  const auto r = partition_edge_case(d);
  CHECK(r.shards.size() == d.indices(Split::Train).size());
  for (const auto& s : r.shards) {
    std::size_t total = 0;
    for (auto v : s.label_histogram) total += v;
    CHECK(total == 1);
    CHECK(s.val_indices.empty());
  }
  check_complete(d, r);
  // Mean over one-hot clients: fraction of pairs with different labels.
  const auto counts = d.class_counts(d.indices(Split::Train));
  const double K = static_cast<double>(r.shards.size());
  double same = 0.0;
  for (auto c : counts) same += static_cast<double>(c) * (c - 1.0) / 2.0;
  CHECK(r.mean_ks == doctest::Approx(1.0 - same / (K * (K - 1) / 2)).epsilon(1e-12));
  check_mean_matches_matrix(r);
}

TEST_CASE("grouped KS mean agrees with brute force above the matrix limit") {
  const auto d = make_dataset(4, 200);
  const auto r = partition_edge_case(d);
  REQUIRE(r.shards.size() > kMaxPairwiseMatrix);
  CHECK(r.pairwise_ks.empty());
  double sum = 0.0;
  const auto K = r.shards.size();
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) sum += ks_statistic(r.shards[i].label_histogram, r.shards[j].label_histogram);
  CHECK(r.mean_ks == doctest::Approx(sum / (K * (K - 1) / 2.0)).epsilon(1e-12));
}

TEST_CASE("share_globally") {
  const auto d = make_dataset(10, 40);
  const auto r = partition_label_skew(d, split3_assignment(5, 10), 2);
  CHECK(share_globally(r.shards, d, 0.0, 0) == r.shards);

  const auto all = share_globally(r.shards, d, 1.0, 0);
  for (const auto& s : all) {
    auto sorted = s.train_indices;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(s.label_histogram == all[0].label_histogram);
  }
  CHECK(ks_pairwise_mean(all).first == 0.0);

  double previous = r.mean_ks;
  for (double f : {0.05, 0.1, 0.3, 0.6, 1.0}) {
    const double ks = ks_pairwise_mean(share_globally(r.shards, d, f, 0)).first;
    CHECK(ks <= previous + 1e-12);
    if (f == 0.05) CHECK(ks < r.mean_ks);
    previous = ks;
  }
  // Contribution sizes: ceil(fraction * |train|) per client.
  const auto shared = share_globally(r.shards, d, 0.05, 9);
  std::size_t pool = 0;
  for (const auto& s : r.shards) pool += (s.train_indices.size() * 5 + 99) / 100;
  for (std::size_t k = 0; k < r.shards.size(); ++k) {
    const auto own = (r.shards[k].train_indices.size() * 5 + 99) / 100;
    CHECK(shared[k].train_indices.size() == r.shards[k].train_indices.size() + pool - own);
  }
  CHECK_THROWS_AS(share_globally(r.shards, d, 1.5, 0), InvalidArgument);
}
