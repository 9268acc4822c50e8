#pragma once

// Weight-space merging rules over a shared base checkpoint.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "tsw/binarize.hpp"
#include "tsw/parallel.hpp"
#include "tsw/tensor.hpp"

namespace tsw {

/// Per-task routing weights on the probability simplex. When produced by
/// neighbor counting, `counts` and `neighbors` hold the exact rational form
/// w_i = counts[i] / neighbors.
struct RouteWeights {
  std::vector<float> w;
  std::vector<std::uint32_t> counts;
  std::uint32_t neighbors = 0;

  std::size_t size() const noexcept { return w.size(); }

  static RouteWeights from_counts(std::vector<std::uint32_t> counts) {
    RouteWeights r;
    for (auto c : counts) r.neighbors += c;
    for (auto c : counts) r.w.push_back(static_cast<float>(static_cast<double>(c) / r.neighbors));
    r.counts = std::move(counts);
    return r;
  }

  static RouteWeights from_floats(std::vector<float> w) {
    RouteWeights r;
    r.w = std::move(w);
    return r;
  }

  double weight(std::size_t i) const {
    if (!counts.empty()) return static_cast<double>(counts[i]) / neighbors;
    return w[i];
  }

  bool exact() const noexcept { return !counts.empty(); }
};

enum class MergeMethod { kAverage, kTaskArithmetic, kDirect, kTSwitch, kAutoSwitch };

struct MergeRecipe {
  MergeMethod method = MergeMethod::kDirect;
  std::optional<float> scaling_coef;
  std::optional<RouteWeights> weights;

  bool valid() const {
    return (weights.has_value() == (method == MergeMethod::kAutoSwitch)) &&
           (scaling_coef.has_value() == (method == MergeMethod::kTaskArithmetic));
  }
};

namespace detail {

inline void check_task_vectors(const NamedTensorSet& base, std::span<const NamedTensorSet> taus) {
  require(!taus.empty(), ErrorCode::kInvalidArgument, "at least one task vector is required");
  const auto fp = base.fingerprint();
  for (std::size_t i = 0; i < taus.size(); ++i) {
    require(taus[i].fingerprint() == fp, ErrorCode::kFingerprintMismatch,
            "task vector " + std::to_string(i) + " does not match base");
  }
}

// Per-tensor double sums of the task vectors, accumulated in task order.
inline std::vector<std::vector<double>> sum_task_vectors(const NamedTensorSet& base,
                                                         std::span<const NamedTensorSet> taus) {
  std::vector<std::vector<double>> sums(base.size());
  parallel_for(base.size(), [&](std::size_t t) {
    auto& s = sums[t];
    s.assign(base[t].tensor.numel(), 0.0);
    for (const auto& tau : taus) {
      const auto& d = tau[t].tensor.data;
      for (std::size_t j = 0; j < s.size(); ++j) s[j] += d[j];
    }
  });
  return sums;
}

inline double l2_norm(const NamedTensorSet& set) {
  double acc = 0.0;
  for (const auto& e : set.entries()) {
    for (float v : e.tensor.data) acc += static_cast<double>(v) * v;
  }
  return std::sqrt(acc);
}

inline double l2_norm(const std::vector<std::vector<double>>& sums) {
  double acc = 0.0;
  for (const auto& s : sums) {
    for (double v : s) acc += v * v;
  }
  return std::sqrt(acc);
}

// base + float(scale * sum), elementwise.
inline NamedTensorSet apply_scaled_sum(const NamedTensorSet& base, const std::vector<std::vector<double>>& sums,
                                       double scale) {
  NamedTensorSet out;
  for (std::size_t t = 0; t < base.size(); ++t) {
    const auto& b = base[t].tensor.data;
    std::vector<float> v(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) v[j] = b[j] + static_cast<float>(scale * sums[t][j]);
    out.add(base[t].name, base[t].tensor.shape, std::move(v));
  }
  for (const auto& [k, val] : base.meta()) out.set_meta(k, val);
  return out;
}

}  // namespace detail

/// Scale factor sum_i ||tau_i|| / ||sum_i tau_i|| used by direct_merge; 0 when
/// the summed task vector vanishes.
inline double direct_merge_scale(const NamedTensorSet& base, std::span<const NamedTensorSet> taus) {
  detail::check_task_vectors(base, taus);
  double norm_sum = 0.0;
  for (const auto& tau : taus) norm_sum += detail::l2_norm(tau);
  const double sum_norm = detail::l2_norm(detail::sum_task_vectors(base, taus));
  return sum_norm == 0.0 ? 0.0 : norm_sum / sum_norm;
}

/// theta + (sum_i ||tau_i|| / ||sum_i tau_i||) * sum_i tau_i, norms over the
/// whole flattened model. Returns base unchanged when the sum cancels.
inline NamedTensorSet direct_merge(const NamedTensorSet& base, std::span<const NamedTensorSet> taus) {
  detail::check_task_vectors(base, taus);
  const auto sums = detail::sum_task_vectors(base, taus);
  double norm_sum = 0.0;
  for (const auto& tau : taus) norm_sum += detail::l2_norm(tau);
  const double sum_norm = detail::l2_norm(sums);
  const double scale = sum_norm == 0.0 ? 0.0 : norm_sum / sum_norm;
  return detail::apply_scaled_sum(base, sums, scale);
}

inline NamedTensorSet weight_average(const NamedTensorSet& base, std::span<const NamedTensorSet> taus) {
  detail::check_task_vectors(base, taus);
  const auto sums = detail::sum_task_vectors(base, taus);
  NamedTensorSet out;
  const double k = static_cast<double>(taus.size());
  for (std::size_t t = 0; t < base.size(); ++t) {
    const auto& b = base[t].tensor.data;
    std::vector<float> v(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) v[j] = b[j] + static_cast<float>(sums[t][j] / k);
    out.add(base[t].name, base[t].tensor.shape, std::move(v));
  }
  for (const auto& [key, val] : base.meta()) out.set_meta(key, val);
  return out;
}

inline NamedTensorSet task_arithmetic(const NamedTensorSet& base, std::span<const NamedTensorSet> taus,
                                      double coef) {
  detail::check_task_vectors(base, taus);
  return detail::apply_scaled_sum(base, detail::sum_task_vectors(base, taus), coef);
}

/// theta + lambda * S_A . S_P. Inactive positions add exactly 0.
inline NamedTensorSet apply_switch(const NamedTensorSet& base, const TaskSwitchPack& pack) {
  require(pack.base_fingerprint == base.fingerprint(), ErrorCode::kFingerprintMismatch,
          "switch was built for a different base");
  const auto delta = reconstruct(pack);
  NamedTensorSet out;
  for (std::size_t t = 0; t < base.size(); ++t) {
    const auto& b = base[t].tensor.data;
    const auto& d = delta[t].tensor.data;
    std::vector<float> v(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) v[j] = b[j] + d[j];
    out.add(base[t].name, base[t].tensor.shape, std::move(v));
  }
  for (const auto& [k, val] : base.meta()) out.set_meta(k, val);
  return out;
}

/// theta + sum_i lambda_i w_i S_A^i . S_P^i, accumulated per element in
/// ascending task order in double precision.
inline NamedTensorSet apply_auto(const NamedTensorSet& base, std::span<const TaskSwitchPack> packs,
                                 const RouteWeights& weights) {
  require(packs.size() == weights.size(), ErrorCode::kInvalidArgument,
          "got " + std::to_string(packs.size()) + " switches but " + std::to_string(weights.size()) + " weights");
  const auto fp = base.fingerprint();
  double total = 0.0;
  for (std::size_t i = 0; i < packs.size(); ++i) {
    require(packs[i].base_fingerprint == fp, ErrorCode::kFingerprintMismatch,
            "switch " + std::to_string(i) + " was built for a different base");
    validate_pack(packs[i]);
    const double w = weights.weight(i);
    require(w >= 0.0 && std::isfinite(w), ErrorCode::kInvalidArgument, "weights must be non-negative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-6, ErrorCode::kInvalidArgument, "weights do not sum to 1");

  NamedTensorSet out;
  std::vector<std::vector<float>> values(base.size());
  parallel_for(base.size(), [&](std::size_t t) {
    const auto& b = base[t].tensor.data;
    std::vector<double> acc(b.size(), 0.0);
    for (std::size_t i = 0; i < packs.size(); ++i) {
      const double w = weights.weight(i);
      if (w == 0.0) continue;
      const auto& st = packs[i].tensors[t];
      const double c = static_cast<double>(packs[i].knob_for(t)) * w;
      std::size_t p = 0;
      st.activation.for_each_set([&](std::size_t j) { acc[j] += st.polarity.get(p++) ? c : -c; });
    }
    auto& v = values[t];
    v.resize(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) v[j] = b[j] + static_cast<float>(acc[j]);
  });
  for (std::size_t t = 0; t < base.size(); ++t) out.add(base[t].name, base[t].tensor.shape, std::move(values[t]));
  for (const auto& [k, val] : base.meta()) out.set_meta(k, val);
  return out;
}

}  // namespace tsw
