#pragma once

// Training-free switch routing: a label-free query set of backbone features
// per task, and neighbor-count weights for each input.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "tsw/binio.hpp"
#include "tsw/fileio.hpp"
#include "tsw/merge.hpp"
#include "tsw/parallel.hpp"

namespace tsw {

enum class Metric { kSquaredEuclidean, kCosine };

struct QueryRow {
  std::uint32_t task_id = 0;
  std::vector<float> feature;

  friend bool operator==(const QueryRow&, const QueryRow&) = default;
};

/// Rows are grouped by task id, insertion order within a task.
struct QueryIndex {
  std::uint32_t num_tasks = 0;
  std::uint32_t dim = 0;
  std::vector<QueryRow> rows;

  std::size_t rows_for(std::uint32_t task) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const QueryRow& r) { return r.task_id == task; }));
  }

  friend bool operator==(const QueryIndex&, const QueryIndex&) = default;
};

using FeatureFn = std::function<std::vector<float>(std::span<const float>)>;

/// Features of the first `per_task` examples of every task (all of them when
/// a task has fewer). Duplicate inputs give duplicate rows.
inline QueryIndex build_query_index(const FeatureFn& feature_fn,
                                    const std::vector<std::vector<std::vector<float>>>& examples,
                                    std::size_t per_task) {
  require(!examples.empty(), ErrorCode::kInvalidArgument, "no tasks given");
  require(per_task >= 1, ErrorCode::kInvalidArgument, "need at least one example per task");
  QueryIndex index;
  index.num_tasks = static_cast<std::uint32_t>(examples.size());
  bool have_dim = false;
  for (std::uint32_t task = 0; task < examples.size(); ++task) {
    const auto& inputs = examples[task];
    require(!inputs.empty(), ErrorCode::kInvalidArgument, "task " + std::to_string(task) + " has no examples");
    const std::size_t take = std::min(per_task, inputs.size());
    for (std::size_t i = 0; i < take; ++i) {
      auto f = feature_fn(inputs[i]);
      if (!have_dim) {
        index.dim = static_cast<std::uint32_t>(f.size());
        have_dim = true;
      }
      require(f.size() == index.dim, ErrorCode::kDimensionMismatch, "inconsistent feature dimensions");
      index.rows.push_back({task, std::move(f)});
    }
  }
  return index;
}

inline double feature_distance(std::span<const float> a, std::span<const float> b, Metric metric) {
  if (metric == Metric::kSquaredEuclidean) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = static_cast<double>(a[j]) - b[j];
      acc += d * d;
    }
    return acc;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += static_cast<double>(a[j]) * b[j];
    na += static_cast<double>(a[j]) * a[j];
    nb += static_cast<double>(b[j]) * b[j];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Row indices of the `neighbors` nearest rows, nearest first; equal
/// distances resolve to the lower row index.
inline std::vector<std::size_t> nearest_rows(const QueryIndex& index, std::span<const float> feature,
                                             std::size_t neighbors, Metric metric = Metric::kSquaredEuclidean) {
  require(!index.rows.empty(), ErrorCode::kInvalidArgument, "query index is empty");
  require(neighbors >= 1, ErrorCode::kInvalidArgument, "neighbor count must be positive");
  require(neighbors <= index.rows.size(), ErrorCode::kInvalidArgument,
          "neighbor count " + std::to_string(neighbors) + " exceeds index size " + std::to_string(index.rows.size()));
  require(feature.size() == index.dim, ErrorCode::kDimensionMismatch,
          "feature has " + std::to_string(feature.size()) + " dims, index has " + std::to_string(index.dim));

  std::vector<std::pair<double, std::size_t>> dist(index.rows.size());
  for (std::size_t r = 0; r < index.rows.size(); ++r) {
    dist[r] = {feature_distance(feature, index.rows[r].feature, metric), r};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(neighbors), dist.end());
  std::vector<std::size_t> out(neighbors);
  for (std::size_t i = 0; i < neighbors; ++i) out[i] = dist[i].second;
  return out;
}

/// w_i = |neighbors with task i| / C.
inline RouteWeights knn_weights(const QueryIndex& index, std::span<const float> feature, std::size_t neighbors,
                                Metric metric = Metric::kSquaredEuclidean) {
  std::vector<std::uint32_t> counts(index.num_tasks, 0);
  for (auto r : nearest_rows(index, feature, neighbors, metric)) ++counts[index.rows[r].task_id];
  return RouteWeights::from_counts(std::move(counts));
}

/// Merged checkpoints keyed by the exact neighbor-count tuple. Each key is
/// computed once; concurrent requests for a key in flight wait for it.
class MergeCache {
 public:
  using Value = std::shared_ptr<const NamedTensorSet>;

  template <typename Compute>
  Value get_or_compute(const std::vector<std::uint32_t>& key, Compute&& compute) {
    std::promise<Value> promise;
    std::shared_future<Value> pending;
    {
      std::lock_guard lock(mu_);
      if (auto it = map_.find(key); it != map_.end()) {
        ++hits_;
        pending = it->second;
      } else {
        ++misses_;
        map_.emplace(key, promise.get_future().share());
      }
    }
    if (pending.valid()) return pending.get();
    try {
      auto value = std::make_shared<const NamedTensorSet>(compute());
      promise.set_value(value);
      return value;
    } catch (...) {
      promise.set_exception(std::current_exception());
      throw;
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

  /// Keys in ascending lexicographic order.
  std::vector<std::vector<std::uint32_t>> keys() const {
    std::lock_guard lock(mu_);
    std::vector<std::vector<std::uint32_t>> out;
    for (const auto& [k, v] : map_) out.push_back(k);
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::vector<std::uint32_t>, std::shared_future<Value>> map_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

struct RouteResult {
  std::vector<RouteWeights> weights;
  std::vector<MergeCache::Value> models;
};

/// Routes every feature vector and materializes its merged checkpoint,
/// sharing one merge per distinct count tuple.
inline RouteResult route_and_apply(const NamedTensorSet& base, std::span<const TaskSwitchPack> packs,
                                   const QueryIndex& index, std::span<const std::vector<float>> features,
                                   std::size_t neighbors, MergeCache& cache,
                                   Metric metric = Metric::kSquaredEuclidean) {
  require(packs.size() == index.num_tasks, ErrorCode::kInvalidArgument,
          "index covers " + std::to_string(index.num_tasks) + " tasks but " + std::to_string(packs.size()) +
              " switches were given");
  RouteResult result;
  result.weights.resize(features.size());
  result.models.resize(features.size());
  parallel_for(features.size(), [&](std::size_t i) {
    result.weights[i] = knn_weights(index, features[i], neighbors, metric);
    result.models[i] = cache.get_or_compute(result.weights[i].counts,
                                            [&] { return apply_auto(base, packs, result.weights[i]); });
  });
  return result;
}

// TQI container: "TQI1", u32 K, u32 d, u32 rows, then rows of (u32 task id,
// d x f32).
inline constexpr char kTqiMagic[4] = {'T', 'Q', 'I', '1'};

inline std::vector<std::uint8_t> encode_tqi(const QueryIndex& index) {
  binio::Writer w;
  w.bytes(std::string_view(kTqiMagic, 4));
  w.put(index.num_tasks);
  w.put(index.dim);
  w.put(static_cast<std::uint32_t>(index.rows.size()));
  for (const auto& row : index.rows) {
    require(row.feature.size() == index.dim, ErrorCode::kDimensionMismatch, "row feature length differs from dim");
    w.put(row.task_id);
    w.floats(row.feature);
  }
  return std::move(w).take();
}

inline QueryIndex decode_tqi(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  require(r.string(4, "TQI magic") == std::string_view(kTqiMagic, 4), ErrorCode::kBadMagic, "not a TQI1 file");
  QueryIndex index;
  index.num_tasks = r.get<std::uint32_t>("task count");
  index.dim = r.get<std::uint32_t>("feature dim");
  const auto rows = r.get<std::uint32_t>("row count");
  require(static_cast<std::uint64_t>(rows) * (4 + 4ull * index.dim) <= r.remaining(), ErrorCode::kTruncated,
          "row table truncated");
  index.rows.reserve(rows);
  for (std::uint32_t i = 0; i < rows; ++i) {
    QueryRow row;
    row.task_id = r.get<std::uint32_t>("task id");
    require(row.task_id < index.num_tasks, ErrorCode::kCorruptData, "task id out of range");
    require(index.rows.empty() || index.rows.back().task_id <= row.task_id, ErrorCode::kCorruptData,
            "rows are not grouped by task");
    row.feature.resize(index.dim);
    r.floats(row.feature, "feature");
    index.rows.push_back(std::move(row));
  }
  r.expect_end("TQI");
  return index;
}

inline void save_tqi(const QueryIndex& index, const std::filesystem::path& path) {
  write_file_atomic(path, encode_tqi(index));
}

inline QueryIndex load_tqi(const std::filesystem::path& path) { return decode_tqi(read_file(path)); }

}  // namespace tsw
