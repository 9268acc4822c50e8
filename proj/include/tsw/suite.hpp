#pragma once

// Synthetic multi-task classification suite. Every task is a mixture of
// Gaussian clusters around a task-specific center; a pre-training mixture
// over the same input regions uses a partially permuted labeling, so the
// pre-trained model is a useful but imperfect starting point for each task.

#include <cmath>
#include <cstdint>
#include <vector>

#include "tsw/rng.hpp"
#include "tsw/toymodel.hpp"

namespace tsw::toy {

struct SuiteConfig {
  std::size_t tasks = 8;
  std::size_t d_in = 32;
  std::size_t classes = 10;
  std::size_t train_per_task = 400;
  std::size_t test_per_task = 400;
  std::size_t pretrain_per_task = 400;
  double task_radius = 6.0;
  double class_radius = 2.0;
  double noise = 1.0;
  // Fraction of classes whose pre-training label equals the task label.
  double pretrain_agreement = 0.5;
};

struct TaskData {
  std::vector<std::vector<double>> means;  // per class
  std::vector<std::uint32_t> pretrain_label;  // task class -> pre-training label
  Dataset train;
  Dataset test;
};

struct TaskSuite {
  SuiteConfig config;
  std::uint64_t seed = 0;
  std::vector<TaskData> tasks;
  Dataset pretrain;
};

inline void validate(const SuiteConfig& c) {
  require(c.tasks >= 2, ErrorCode::kInvalidArgument, "need at least two tasks");
  require(c.classes >= 2, ErrorCode::kInvalidArgument, "need at least two classes");
  require(c.d_in >= 2, ErrorCode::kInvalidArgument, "need at least two input dimensions");
  require(c.train_per_task >= 1 && c.test_per_task >= 1, ErrorCode::kInvalidArgument, "splits must be nonempty");
  require(c.task_radius >= 0 && c.class_radius >= 0 && c.noise >= 0, ErrorCode::kInvalidArgument,
          "radii and noise must be non-negative");
  require(c.pretrain_agreement >= 0 && c.pretrain_agreement <= 1, ErrorCode::kInvalidArgument,
          "pretrain_agreement must lie in [0, 1]");
}

namespace detail {

// Balanced labels (i mod classes) in shuffled order.
inline Dataset sample_clusters(Rng& rng, const std::vector<std::vector<double>>& means, std::size_t n, double noise,
                               const std::vector<std::uint32_t>* relabel) {
  const std::size_t classes = means.size();
  const std::size_t dim = means[0].size();
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % classes);
  rng.shuffle(labels);
  Dataset d;
  d.dim = dim;
  d.x.resize(n * dim);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = labels[i];
    for (std::size_t j = 0; j < dim; ++j) d.x[i * dim + j] = static_cast<float>(means[c][j] + noise * rng.normal());
    d.y[i] = relabel ? (*relabel)[c] : c;
  }
  return d;
}

inline void append(Dataset& into, const Dataset& from) {
  into.dim = from.dim;
  into.x.insert(into.x.end(), from.x.begin(), from.x.end());
  into.y.insert(into.y.end(), from.y.begin(), from.y.end());
}

}  // namespace detail

inline TaskSuite gen_suite(const SuiteConfig& config, std::uint64_t seed) {
  validate(config);
  TaskSuite suite;
  suite.config = config;
  suite.seed = seed;
  Rng rng(seed);
  const auto agree = static_cast<std::size_t>(std::lround(config.pretrain_agreement * config.classes));
  for (std::size_t t = 0; t < config.tasks; ++t) {
    TaskData task;
    const auto center = rng.unit_vector(config.d_in);
    for (std::size_t c = 0; c < config.classes; ++c) {
      const auto dir = rng.unit_vector(config.d_in);
      std::vector<double> mean(config.d_in);
      for (std::size_t j = 0; j < config.d_in; ++j) {
        mean[j] = config.task_radius * center[j] + config.class_radius * dir[j];
      }
      task.means.push_back(std::move(mean));
    }
    // Classes outside the agreeing subset are cyclically shifted among
    // themselves, so none of them keeps its label.
    std::vector<std::uint32_t> perm(config.classes);
    for (std::size_t c = 0; c < perm.size(); ++c) perm[c] = static_cast<std::uint32_t>(c);
    rng.shuffle(perm);
    task.pretrain_label.resize(config.classes);
    for (std::size_t c = 0; c < config.classes; ++c) task.pretrain_label[c] = static_cast<std::uint32_t>(c);
    const std::size_t moved = config.classes - agree;
    if (moved >= 2) {
      for (std::size_t i = 0; i < moved; ++i) {
        task.pretrain_label[perm[agree + i]] = perm[agree + (i + 1) % moved];
      }
    }
    suite.tasks.push_back(std::move(task));
  }
  for (auto& task : suite.tasks) {
    task.train = detail::sample_clusters(rng, task.means, config.train_per_task, config.noise, nullptr);
    task.test = detail::sample_clusters(rng, task.means, config.test_per_task, config.noise, nullptr);
    auto pre = detail::sample_clusters(rng, task.means, config.pretrain_per_task, config.noise, &task.pretrain_label);
    detail::append(suite.pretrain, pre);
  }
  return suite;
}

}  // namespace tsw::toy
