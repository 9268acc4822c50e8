#pragma once

// Desk-scale experiment runners: train a pre-trained model and one fine-tune
// per task on a synthetic suite, then evaluate discard, binarization and
// merging variants of the resulting task vectors.

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsw/binarize.hpp"
#include "tsw/merge.hpp"
#include "tsw/parallel.hpp"
#include "tsw/pulse.hpp"
#include "tsw/router.hpp"
#include "tsw/suite.hpp"
#include "tsw/taskvec.hpp"
#include "tsw/toymodel.hpp"

namespace tsw::toy {

struct BenchConfig {
  SuiteConfig suite{.tasks = 8,
                    .d_in = 32,
                    .classes = 10,
                    .train_per_task = 400,
                    .test_per_task = 400,
                    .pretrain_per_task = 400,
                    .task_radius = 10.0,
                    .class_radius = 7.0,
                    .noise = 1.0,
                    .pretrain_agreement = 0.5};
  std::vector<std::size_t> hidden = {64};
  TrainConfig pretrain{.optimizer = Optimizer::kSgd, .lr = 0.05, .epochs = 20, .batch = 32, .seed = 0,
                       .freeze_head = false};
  TrainConfig finetune{.optimizer = Optimizer::kAdam, .lr = 0.01, .epochs = 60, .batch = 32, .seed = 0,
                       .freeze_head = true};
  std::vector<double> alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double alpha = 0.5;                   // merging bench discard ratio
  std::size_t examples_per_task = 100;  // query set size N
  std::size_t neighbors = 5;            // C
  double arith_coef = 0.3;
  Scope scope = Scope::kGlobal;

  ModelSpec model_spec() const {
    ModelSpec spec;
    spec.dims.push_back(suite.d_in);
    spec.dims.insert(spec.dims.end(), hidden.begin(), hidden.end());
    spec.dims.push_back(suite.classes);
    return spec;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string v) {
  if (!v.empty() && v.front() == '[') {
    require(v.back() == ']', ErrorCode::kInvalidArgument, "unterminated list: " + v);
    v = v.substr(1, v.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  require(ec == std::errc() && p == end, ErrorCode::kInvalidArgument, key + ": cannot parse '" + s + "'");
  return v;
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment, lists are comma
/// separated and may be bracketed. Unknown keys are rejected.
inline BenchConfig parse_bench_config(const std::string& text) {
  BenchConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    auto value = detail::trim(std::string_view(line).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);

    auto as_size = [&] { return detail::parse_number<std::size_t>(key, value); };
    auto as_double = [&] { return detail::parse_number<double>(key, value); };

    if (key == "tasks") cfg.suite.tasks = as_size();
    else if (key == "d_in") cfg.suite.d_in = as_size();
    else if (key == "classes") cfg.suite.classes = as_size();
    else if (key == "train_per_task") cfg.suite.train_per_task = as_size();
    else if (key == "test_per_task") cfg.suite.test_per_task = as_size();
    else if (key == "pretrain_per_task") cfg.suite.pretrain_per_task = as_size();
    else if (key == "task_radius") cfg.suite.task_radius = as_double();
    else if (key == "class_radius") cfg.suite.class_radius = as_double();
    else if (key == "noise") cfg.suite.noise = as_double();
    else if (key == "pretrain_agreement") cfg.suite.pretrain_agreement = as_double();
    else if (key == "hidden") {
      cfg.hidden.clear();
      for (const auto& item : detail::split_list(value)) cfg.hidden.push_back(detail::parse_number<std::size_t>(key, item));
      require(!cfg.hidden.empty(), ErrorCode::kInvalidArgument, "hidden must list at least one width");
    } else if (key == "pretrain_lr") cfg.pretrain.lr = as_double();
    else if (key == "pretrain_epochs") cfg.pretrain.epochs = as_size();
    else if (key == "pretrain_batch") cfg.pretrain.batch = as_size();
    else if (key == "finetune_lr") cfg.finetune.lr = as_double();
    else if (key == "finetune_epochs") cfg.finetune.epochs = as_size();
    else if (key == "finetune_batch") cfg.finetune.batch = as_size();
    else if (key == "freeze_head") {
      require(value == "true" || value == "false", ErrorCode::kInvalidArgument, "freeze_head must be true or false");
      cfg.finetune.freeze_head = value == "true";
    } else if (key == "pretrain_optimizer" || key == "finetune_optimizer") {
      require(value == "sgd" || value == "adam", ErrorCode::kInvalidArgument, key + " must be sgd or adam");
      (key == "pretrain_optimizer" ? cfg.pretrain : cfg.finetune).optimizer =
          value == "sgd" ? Optimizer::kSgd : Optimizer::kAdam;
    }
    else if (key == "alphas") {
      cfg.alphas.clear();
      for (const auto& item : detail::split_list(value)) cfg.alphas.push_back(detail::parse_number<double>(key, item));
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& item : detail::split_list(value)) {
        cfg.seeds.push_back(detail::parse_number<std::uint64_t>(key, item));
      }
    } else if (key == "alpha") cfg.alpha = as_double();
    else if (key == "examples_per_task" || key == "N") cfg.examples_per_task = as_size();
    else if (key == "neighbors" || key == "C") cfg.neighbors = as_size();
    else if (key == "arith_coef") cfg.arith_coef = as_double();
    else if (key == "scope") {
      require(value == "global" || value == "per_tensor", ErrorCode::kInvalidArgument, "scope must be global or per_tensor");
      cfg.scope = value == "global" ? Scope::kGlobal : Scope::kPerTensor;
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
    }
  }
  validate(cfg.suite);
  for (double a : cfg.alphas) check_alpha(a);
  check_alpha(cfg.alpha);
  require(!cfg.seeds.empty(), ErrorCode::kInvalidArgument, "at least one seed is required");
  return cfg;
}

struct BenchRow {
  std::string experiment;
  double alpha = 0.0;
  std::string method;
  std::string task;  // task index, or "mean"
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  void add(std::string experiment, double alpha, std::string method, std::string task, std::string metric,
           double value, std::uint64_t seed) {
    require(std::isfinite(value), ErrorCode::kInternal, "non-finite bench value for " + method);
    rows.push_back({std::move(experiment), alpha, std::move(method), std::move(task), std::move(metric), value, seed});
  }

  void append(const BenchReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

  std::string to_csv() const {
    std::string out = "experiment,alpha,method,task,metric,value,seed\n";
    char buf[64];
    for (const auto& r : rows) {
      out += r.experiment;
      std::snprintf(buf, sizeof buf, ",%.2f,", r.alpha);
      out += buf;
      out += r.method + "," + r.task + "," + r.metric;
      std::snprintf(buf, sizeof buf, ",%.6f,", r.value);
      out += buf;
      out += std::to_string(r.seed) + "\n";
    }
    return out;
  }

  /// Mean of per-task `metric` values (all seeds) for one cell.
  double mean(const std::string& experiment, const std::string& method, double alpha,
              const std::string& metric = "accuracy") const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.experiment == experiment && r.method == method && r.metric == metric && r.task != "mean" &&
          std::abs(r.alpha - alpha) < 1e-9) {
        sum += r.value;
        ++n;
      }
    }
    require(n > 0, ErrorCode::kInvalidArgument, "no rows for " + experiment + "/" + method);
    return sum / static_cast<double>(n);
  }
};

/// Pre-trained weights, per-task fine-tunes and task vectors for one seed.
struct TrainedSuite {
  TaskSuite suite;
  ModelSpec spec;
  NamedTensorSet pretrained;
  std::vector<NamedTensorSet> finetuned;
  std::vector<NamedTensorSet> task_vectors;
  std::uint64_t seed = 0;

  std::size_t tasks() const noexcept { return suite.tasks.size(); }
};

enum SeedStream : std::uint64_t { kSuiteStream = 1, kInitStream, kPretrainStream, kFinetuneStream = 100,
                                  kDareStream = 1000 };

inline TrainedSuite prepare(const BenchConfig& cfg, std::uint64_t seed) {
  TrainedSuite ts;
  ts.seed = seed;
  ts.spec = cfg.model_spec();
  ts.suite = gen_suite(cfg.suite, derive_seed(seed, kSuiteStream));
  auto init = init_params(ts.spec, derive_seed(seed, kInitStream));
  auto pre_cfg = cfg.pretrain;
  pre_cfg.seed = derive_seed(seed, kPretrainStream);
  ts.pretrained = train(init, ts.suite.pretrain, pre_cfg);
  ts.finetuned.resize(ts.tasks());
  ts.task_vectors.resize(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) {
    auto ft_cfg = cfg.finetune;
    ft_cfg.seed = derive_seed(seed, kFinetuneStream + t);
    ts.finetuned[t] = train(ts.pretrained, ts.suite.tasks[t].train, ft_cfg);
    ts.task_vectors[t] = compute_task_vector(ts.pretrained, ts.finetuned[t]);
  });
  return ts;
}

namespace detail {

inline double test_accuracy(const TrainedSuite& ts, const NamedTensorSet& params, std::size_t task) {
  return evaluate(params, ts.spec, ts.suite.tasks[task].test);
}

// Per-task accuracy of base + delta_t for every task t.
inline std::vector<double> per_task_accuracy(const TrainedSuite& ts, const std::vector<NamedTensorSet>& deltas) {
  std::vector<double> acc(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) { acc[t] = test_accuracy(ts, add_delta(ts.pretrained, deltas[t]), t); });
  return acc;
}

// Accuracy of one merged model on every task.
inline std::vector<double> merged_accuracy(const TrainedSuite& ts, const NamedTensorSet& merged) {
  std::vector<double> acc(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) { acc[t] = test_accuracy(ts, merged, t); });
  return acc;
}

inline void add_task_rows(BenchReport& report, const std::string& experiment, double alpha, const std::string& method,
                          const std::vector<double>& acc, std::uint64_t seed) {
  double sum = 0.0;
  for (std::size_t t = 0; t < acc.size(); ++t) {
    report.add(experiment, alpha, method, std::to_string(t), "accuracy", acc[t], seed);
    sum += acc[t];
  }
  report.add(experiment, alpha, method, "mean", "accuracy", sum / static_cast<double>(acc.size()), seed);
}

}  // namespace detail

/// Discard-condition study on one trained suite: per-task accuracy of the
/// fine-tuned model, P-Discard, discard-high, DARE and Bin-Discard variants,
/// and direct-merge accuracy of the discarded and binarized task vector sets.
inline BenchReport run_controlled(const TrainedSuite& ts, const std::vector<double>& alphas, Scope scope = Scope::kGlobal) {
  BenchReport report;
  const auto seed = ts.seed;
  std::vector<double> finetuned(ts.tasks()), pretrained(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) {
    finetuned[t] = detail::test_accuracy(ts, ts.finetuned[t], t);
    pretrained[t] = detail::test_accuracy(ts, ts.pretrained, t);
  });
  const auto full_merge = detail::merged_accuracy(ts, direct_merge(ts.pretrained, ts.task_vectors));

  for (double alpha : alphas) {
    std::vector<NamedTensorSet> pd(ts.tasks()), high(ts.tasks()), dare(ts.tasks()), bin(ts.tasks());
    parallel_for(ts.tasks(), [&](std::size_t t) {
      const auto& tau = ts.task_vectors[t];
      pd[t] = p_discard(tau, alpha, scope);
      high[t] = discard_high(tau, alpha, scope);
      dare[t] = dare_discard(tau, alpha, derive_seed(seed, kDareStream + t));
      bin[t] = bin_discard(tau, alpha, scope).reconstruction;
    });
    detail::add_task_rows(report, "controlled", alpha, "pretrained", pretrained, seed);
    detail::add_task_rows(report, "controlled", alpha, "finetuned", finetuned, seed);
    detail::add_task_rows(report, "controlled", alpha, "p_discard", detail::per_task_accuracy(ts, pd), seed);
    detail::add_task_rows(report, "controlled", alpha, "discard_high", detail::per_task_accuracy(ts, high), seed);
    detail::add_task_rows(report, "controlled", alpha, "dare", detail::per_task_accuracy(ts, dare), seed);
    detail::add_task_rows(report, "controlled", alpha, "bin_discard", detail::per_task_accuracy(ts, bin), seed);

    detail::add_task_rows(report, "controlled_merge", alpha, "direct_full", full_merge, seed);
    detail::add_task_rows(report, "controlled_merge", alpha, "direct_p_discard",
                          detail::merged_accuracy(ts, direct_merge(ts.pretrained, pd)), seed);
    detail::add_task_rows(report, "controlled_merge", alpha, "direct_dare",
                          detail::merged_accuracy(ts, direct_merge(ts.pretrained, dare)), seed);
    detail::add_task_rows(report, "controlled_merge", alpha, "direct_bin_discard",
                          detail::merged_accuracy(ts, direct_merge(ts.pretrained, bin)), seed);
  }
  return report;
}

inline BenchReport run_controlled(const BenchConfig& cfg) {
  BenchReport report;
  for (auto seed : cfg.seeds) report.append(run_controlled(prepare(cfg, seed), cfg.alphas, cfg.scope));
  return report;
}

struct MergeBenchOptions {
  double alpha = 0.5;
  std::size_t examples_per_task = 100;
  std::size_t neighbors = 5;
  double arith_coef = 0.3;
  Scope scope = Scope::kGlobal;
  Metric metric = Metric::kSquaredEuclidean;
};

/// Static merges vs. oracle-routed T-Switch vs. KNN-routed Auto-Switch on
/// one trained suite. The query set holds backbone features of the first N
/// training inputs of every task; routing is evaluated on the test inputs.
inline BenchReport run_merging_bench(const TrainedSuite& ts, const MergeBenchOptions& opt) {
  BenchReport report;
  const auto seed = ts.seed;
  const double alpha = opt.alpha;
  const auto& base = ts.pretrained;

  std::vector<double> individual(ts.tasks()), pretrained(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) {
    individual[t] = detail::test_accuracy(ts, ts.finetuned[t], t);
    pretrained[t] = detail::test_accuracy(ts, base, t);
  });
  detail::add_task_rows(report, "merge", alpha, "pretrained", pretrained, seed);
  detail::add_task_rows(report, "merge", alpha, "individual", individual, seed);
  detail::add_task_rows(report, "merge", alpha, "weight_average",
                        detail::merged_accuracy(ts, weight_average(base, ts.task_vectors)), seed);
  detail::add_task_rows(report, "merge", alpha, "task_arithmetic",
                        detail::merged_accuracy(ts, task_arithmetic(base, ts.task_vectors, opt.arith_coef)), seed);
  const auto backbone = direct_merge(base, ts.task_vectors);
  detail::add_task_rows(report, "merge", alpha, "direct", detail::merged_accuracy(ts, backbone), seed);

  std::vector<TaskSwitchPack> packs(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) { packs[t] = bin_discard(ts.task_vectors[t], alpha, opt.scope).pack; });

  std::vector<double> tswitch(ts.tasks());
  parallel_for(ts.tasks(), [&](std::size_t t) { tswitch[t] = detail::test_accuracy(ts, apply_switch(base, packs[t]), t); });
  detail::add_task_rows(report, "merge", alpha, "t_switch", tswitch, seed);

  const Network backbone_net(backbone, ts.spec);
  std::vector<std::vector<std::vector<float>>> examples(ts.tasks());
  for (std::size_t t = 0; t < ts.tasks(); ++t) {
    const auto& train = ts.suite.tasks[t].train;
    for (std::size_t i = 0; i < std::min(opt.examples_per_task, train.size()); ++i) {
      auto r = train.row(i);
      examples[t].emplace_back(r.begin(), r.end());
    }
  }
  const auto index = build_query_index([&](std::span<const float> x) { return backbone_net.feature(x); }, examples,
                                       opt.examples_per_task);

  MergeCache cache;
  std::vector<double> autoswitch(ts.tasks()), routed(ts.tasks());
  for (std::size_t t = 0; t < ts.tasks(); ++t) {
    const auto& test = ts.suite.tasks[t].test;
    std::vector<std::vector<float>> features(test.size());
    parallel_for(test.size(), [&](std::size_t i) { features[i] = backbone_net.feature(test.row(i)); });
    const auto routes = route_and_apply(base, packs, index, features, opt.neighbors, cache, opt.metric);
    std::vector<std::uint8_t> correct(test.size()), route_ok(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
      correct[i] = Network(*routes.models[i], ts.spec).predict(test.row(i)) == test.y[i];
      route_ok[i] = Network::argmax(routes.weights[i].w) == t;
    });
    std::size_t c = 0, r = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      c += correct[i];
      r += route_ok[i];
    }
    autoswitch[t] = static_cast<double>(c) / static_cast<double>(test.size());
    routed[t] = static_cast<double>(r) / static_cast<double>(test.size());
  }
  detail::add_task_rows(report, "merge", alpha, "auto_switch", autoswitch, seed);
  for (std::size_t t = 0; t < ts.tasks(); ++t) {
    report.add("merge", alpha, "auto_switch", std::to_string(t), "routing_accuracy", routed[t], seed);
  }
  report.add("merge", alpha, "auto_switch", "mean", "distinct_merges", static_cast<double>(cache.size()), seed);
  return report;
}

inline BenchReport run_merging_bench(const BenchConfig& cfg) {
  MergeBenchOptions opt{cfg.alpha, cfg.examples_per_task, cfg.neighbors, cfg.arith_coef, cfg.scope};
  BenchReport report;
  for (auto seed : cfg.seeds) report.append(run_merging_bench(prepare(cfg, seed), opt));
  return report;
}

}  // namespace tsw::toy
