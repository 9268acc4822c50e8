#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"
#include "tsw/router.hpp"

using tsw::QueryIndex;
using tsw::RouteWeights;

namespace {

QueryIndex index_from(const std::vector<std::pair<std::uint32_t, std::vector<float>>>& rows, std::uint32_t tasks) {
  QueryIndex idx;
  idx.num_tasks = tasks;
  idx.dim = static_cast<std::uint32_t>(rows.front().second.size());
  for (const auto& [t, f] : rows) idx.rows.push_back({t, f});
  return idx;
}

QueryIndex random_index(std::mt19937_64& gen, std::size_t rows, std::uint32_t tasks, std::uint32_t dim,
                        bool coarse) {
  QueryIndex idx;
  idx.num_tasks = tasks;
  idx.dim = dim;
  std::normal_distribution<float> val;
  std::uniform_int_distribution<int> small(-2, 2);
  const std::size_t per = rows / tasks;
  for (std::uint32_t t = 0; t < tasks; ++t) {
    for (std::size_t i = 0; i < per + (t < rows % tasks ? 1 : 0); ++i) {
      std::vector<float> f(dim);
      // Coarse integer grids produce many exact distance ties.
      for (auto& v : f) v = coarse ? static_cast<float>(small(gen)) : val(gen);
      idx.rows.push_back({t, std::move(f)});
    }
  }
  return idx;
}

// Exhaustive oracle: stable sort of every row by distance.
std::vector<std::uint32_t> oracle_counts(const QueryIndex& idx, const std::vector<float>& q, std::size_t c) {
  std::vector<std::size_t> order(idx.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> d(idx.rows.size());
  for (std::size_t r = 0; r < idx.rows.size(); ++r) {
    double acc = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double diff = static_cast<double>(q[j]) - idx.rows[r].feature[j];
      acc += diff * diff;
    }
    d[r] = acc;
  }
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] < d[b]; });
  std::vector<std::uint32_t> counts(idx.num_tasks, 0);
  for (std::size_t i = 0; i < c; ++i) ++counts[idx.rows[order[i]].task_id];
  return counts;
}

tsw::TaskSwitchPack pack_of(std::vector<int> mask, std::vector<int> signs, float lambda) {
  tsw::TaskSwitchPack p;
  tsw::SwitchTensor st{"w", {mask.size()}, tsw::BitVector(mask.size()), tsw::BitVector(signs.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) st.activation.set(i, mask[i] != 0);
  for (std::size_t i = 0; i < signs.size(); ++i) st.polarity.set(i, signs[i] > 0);
  p.tensors.push_back(std::move(st));
  p.knobs = {lambda};
  p.base_fingerprint = p.structure_fingerprint();
  return p;
}

}  // namespace

TEST(QueryIndex, BuildKeepsFirstNAndDuplicates) {
  const tsw::FeatureFn twice = [](std::span<const float> x) {
    std::vector<float> f(x.begin(), x.end());
    for (auto& v : f) v *= 2;
    return f;
  };
  const auto idx = tsw::build_query_index(twice, {{{1, 2}}, {{3, 4}}}, 1);
  EXPECT_EQ(idx.rows.size(), 2u);
  EXPECT_EQ(idx.dim, 2u);
  EXPECT_EQ(idx.rows[1].feature, (std::vector<float>{6, 8}));

  const auto dup = tsw::build_query_index(twice, {{{1, 1}, {1, 1}, {5, 5}}, {{0, 0}}}, 2);
  ASSERT_EQ(dup.rows.size(), 3u);
  EXPECT_EQ(dup.rows[0], dup.rows[1]);
  EXPECT_EQ(dup.rows_for(0), 2u);
  EXPECT_EQ(dup.rows_for(1), 1u);

  EXPECT_THROW(tsw::build_query_index(twice, {}, 1), tsw::Error);
  EXPECT_THROW(tsw::build_query_index(twice, {{{1, 2}}, {}}, 1), tsw::Error);
  EXPECT_THROW(tsw::build_query_index(twice, {{{1, 2}}, {{1, 2, 3}}}, 1), tsw::Error);
}

TEST(KnnWeights, CountingExample) {
  // Rows sit on a line; the query at 0 picks the five closest in order.
  const auto idx = index_from({{0, {0.0f}}, {0, {1.0f}}, {1, {2.0f}}, {0, {3.0f}}, {2, {4.0f}}, {1, {9.0f}}}, 3);
  const auto w = tsw::knn_weights(idx, std::vector<float>{0.0f}, 5);
  EXPECT_EQ(w.counts, (std::vector<std::uint32_t>{3, 1, 1}));
  EXPECT_EQ(w.w, (std::vector<float>{0.6f, 0.2f, 0.2f}));

  const auto one = tsw::knn_weights(idx, std::vector<float>{8.0f}, 1);
  EXPECT_EQ(one.counts, (std::vector<std::uint32_t>{0, 1, 0}));
}

TEST(KnnWeights, StoredRowIsItsOwnNeighbor) {
  const auto idx = index_from({{0, {0, 0}}, {0, {0.1f, 0}}, {1, {10, 10}}, {1, {10, 10.1f}}}, 2);
  for (std::size_t r = 0; r < idx.rows.size(); ++r) {
    EXPECT_EQ(tsw::nearest_rows(idx, idx.rows[r].feature, 1).front(), r);
    for (std::size_t c = 1; c <= 2; ++c) {
      const auto w = tsw::knn_weights(idx, idx.rows[r].feature, c);
      EXPECT_EQ(w.counts[idx.rows[r].task_id], c);
    }
  }
}

TEST(KnnWeights, TiesResolveToLowerRow) {
  const auto idx = index_from({{1, {1}}, {0, {-1}}, {0, {1}}}, 2);
  EXPECT_EQ(tsw::nearest_rows(idx, std::vector<float>{0}, 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(tsw::knn_weights(idx, std::vector<float>{0}, 1).counts, (std::vector<std::uint32_t>{0, 1}));
}

TEST(KnnWeights, Errors) {
  const auto idx = index_from({{0, {0, 0}}, {1, {1, 1}}}, 2);
  EXPECT_THROW(tsw::knn_weights(idx, std::vector<float>{0, 0}, 3), tsw::Error);
  EXPECT_THROW(tsw::knn_weights(idx, std::vector<float>{0, 0}, 0), tsw::Error);
  EXPECT_THROW(tsw::knn_weights(idx, std::vector<float>{0}, 1), tsw::Error);
}

TEST(KnnWeights, MatchesBruteForceOracle) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t rows = 2 + gen() % 300;
    const auto tasks = static_cast<std::uint32_t>(1 + gen() % std::min<std::size_t>(rows, 6));
    const bool coarse = trial % 2 == 0;
    const auto idx = random_index(gen, rows, tasks, 1 + static_cast<std::uint32_t>(gen() % 5), coarse);
    std::vector<float> q = idx.rows[gen() % rows].feature;
    if (trial % 3 == 0) {
      for (auto& v : q) v += 0.25f;
    }
    for (std::size_t c = 1; c <= rows; ++c) {
      const auto w = tsw::knn_weights(idx, q, c);
      ASSERT_EQ(w.counts, oracle_counts(idx, q, c)) << "trial " << trial << " C=" << c;
      ASSERT_EQ(std::accumulate(w.counts.begin(), w.counts.end(), 0u), c);
      ASSERT_EQ(w.neighbors, c);
    }
  }
}

TEST(KnnWeights, CosineMetric) {
  const auto idx = index_from({{0, {1, 0}}, {1, {0, 1}}, {1, {0, 5}}}, 2);
  EXPECT_EQ(tsw::knn_weights(idx, std::vector<float>{0.1f, 3}, 2, tsw::Metric::kCosine).counts,
            (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(tsw::knn_weights(idx, std::vector<float>{10, 1}, 1, tsw::Metric::kCosine).counts,
            (std::vector<std::uint32_t>{1, 0}));
}

TEST(KnnWeights, LargerNeighborhoodsDiluteTheTrueTask) {
  // Well-separated clusters: average true-task weight on held-out points
  // never increases as C grows toward the index size.
  std::mt19937_64 gen(88);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  const std::uint32_t tasks = 4, dim = 8, per = 50;
  std::vector<std::vector<float>> centers(tasks, std::vector<float>(dim));
  for (auto& c : centers) {
    for (auto& v : c) v = 6.0f * noise(gen);
  }
  auto sample = [&](std::uint32_t t) {
    std::vector<float> f(dim);
    for (std::uint32_t j = 0; j < dim; ++j) f[j] = centers[t][j] + noise(gen);
    return f;
  };
  QueryIndex idx;
  idx.num_tasks = tasks;
  idx.dim = dim;
  for (std::uint32_t t = 0; t < tasks; ++t) {
    for (std::uint32_t i = 0; i < per; ++i) idx.rows.push_back({t, sample(t)});
  }
  std::vector<std::pair<std::uint32_t, std::vector<float>>> held;
  for (std::uint32_t t = 0; t < tasks; ++t) {
    for (int i = 0; i < 25; ++i) held.emplace_back(t, sample(t));
  }
  double previous = 2.0;
  for (std::size_t c : {1u, 5u, 25u, 50u, 100u, 150u, 200u}) {
    double mean = 0;
    for (const auto& [t, f] : held) mean += tsw::knn_weights(idx, f, c).weight(t);
    mean /= static_cast<double>(held.size());
    EXPECT_LE(mean, previous + 1e-12) << "C=" << c;
    previous = mean;
  }
  EXPECT_DOUBLE_EQ(previous, 0.25);
}

TEST(RouteAndApply, CacheSharesIdenticalCountTuples) {
  const auto base = testutil::single({0, 0});
  const std::vector<tsw::TaskSwitchPack> packs = {pack_of({1, 0}, {+1}, 1.0f), pack_of({0, 1}, {-1}, 2.0f)};
  const auto idx = index_from({{0, {0, 0}}, {0, {0, 1}}, {1, {10, 10}}, {1, {10, 11}}}, 2);
  const std::vector<std::vector<float>> features = {{0, 0.2f}, {0.1f, 0}, {10, 10.5f}, {0, 0.3f}};
  tsw::MergeCache cache;
  const auto r = tsw::route_and_apply(base, packs, idx, features, 2, cache);
  EXPECT_EQ(cache.size(), 2u);
  EXPECT_EQ(cache.misses(), 2u);
  EXPECT_EQ(cache.hits(), 2u);
  EXPECT_EQ(r.models[0].get(), r.models[1].get());
  EXPECT_EQ(r.models[0].get(), r.models[3].get());
  EXPECT_EQ(*r.models[0], tsw::apply_switch(base, packs[0]));
  EXPECT_EQ(*r.models[2], tsw::apply_switch(base, packs[1]));
  EXPECT_EQ(cache.keys(), (std::vector<std::vector<std::uint32_t>>{{0, 2}, {2, 0}}));

  const std::vector<tsw::TaskSwitchPack> wrong = {packs[0]};
  EXPECT_THROW(tsw::route_and_apply(base, wrong, idx, features, 2, cache), tsw::Error);
}

TEST(RouteAndApply, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 gen(12);
  const auto idx = random_index(gen, 200, 3, 4, false);
  tsw::NamedTensorSet base;
  base.add("w", {64}, std::vector<float>(64, 0.5f));
  std::vector<tsw::TaskSwitchPack> packs;
  for (int t = 0; t < 3; ++t) {
    std::vector<float> v(64);
    std::normal_distribution<float> val;
    for (auto& x : v) x = val(gen);
    packs.push_back(tsw::bin_discard(testutil::single(v), 0.5).pack);
  }
  std::vector<std::vector<float>> feats;
  for (int i = 0; i < 50; ++i) feats.push_back(idx.rows[gen() % idx.rows.size()].feature);

  ::setenv("TSW_THREADS", "1", 1);
  tsw::MergeCache c1;
  const auto a = tsw::route_and_apply(base, packs, idx, feats, 7, c1);
  ::setenv("TSW_THREADS", "3", 1);
  tsw::MergeCache c3;
  const auto b = tsw::route_and_apply(base, packs, idx, feats, 7, c3);
  ::unsetenv("TSW_THREADS");
  for (std::size_t i = 0; i < feats.size(); ++i) {
    EXPECT_EQ(a.weights[i].counts, b.weights[i].counts);
    EXPECT_EQ(*a.models[i], *b.models[i]);
  }
  EXPECT_EQ(c1.keys(), c3.keys());
}

TEST(Tqi, RoundTripAndCorruption) {
  std::mt19937_64 gen(3);
  const auto idx = random_index(gen, 37, 4, 6, false);
  const auto bytes = tsw::encode_tqi(idx);
  EXPECT_EQ(bytes.size(), 16u + 37u * (4 + 6 * 4));
  EXPECT_EQ(tsw::decode_tqi(bytes), idx);

  auto bad_task = bytes;
  bad_task[16] = 9;
  EXPECT_THROW(tsw::decode_tqi(bad_task), tsw::Error);
  auto short_file = bytes;
  short_file.pop_back();
  EXPECT_THROW(tsw::decode_tqi(short_file), tsw::Error);
  auto trailing = bytes;
  trailing.push_back(1);
  EXPECT_THROW(tsw::decode_tqi(trailing), tsw::Error);

  const auto dir = testutil::scratch_dir("tqi");
  tsw::save_tqi(idx, dir / "q.tqi");
  EXPECT_EQ(tsw::load_tqi(dir / "q.tqi"), idx);
}
