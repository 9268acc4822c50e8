#pragma once

// Magnitude-based pulse masks over task vectors and the discard procedures
// built on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tsw/bitvector.hpp"
#include "tsw/tensor.hpp"

namespace tsw {

enum class Scope : std::uint8_t { kGlobal = 0, kPerTensor = 1 };

inline std::string_view to_string(Scope s) { return s == Scope::kGlobal ? "global" : "per_tensor"; }

struct MaskCounts {
  std::uint64_t kept_pos = 0;
  std::uint64_t kept_neg = 0;
  std::uint64_t total = 0;
};

/// Activation thresholds of one scope unit. An element is kept iff it is
/// strictly above gamma_u or strictly below gamma_l (modulo index tie-break).
struct Thresholds {
  float gamma_u = 0.0f;
  float gamma_l = 0.0f;
};

struct PulseMask {
  Scope scope = Scope::kGlobal;
  std::vector<BitVector> keep;         // one per tensor, 1 = kept
  std::vector<MaskCounts> counts;      // one per tensor
  std::vector<Thresholds> thresholds;  // one per scope unit

  MaskCounts totals() const {
    MaskCounts t;
    for (const auto& c : counts) {
      t.kept_pos += c.kept_pos;
      t.kept_neg += c.kept_neg;
      t.total += c.total;
    }
    return t;
  }
};

inline void check_alpha(double alpha) {
  require(alpha >= 0.0 && alpha < 1.0, ErrorCode::kInvalidArgument,
          "discard ratio must lie in [0, 1), got " + std::to_string(alpha));
}

/// Number of elements discarded from a pool of n.
inline std::uint64_t discard_count(double alpha, std::uint64_t n) {
  return static_cast<std::uint64_t>(std::floor(alpha * static_cast<double>(n)));
}

namespace detail {

struct Candidate {
  float value;
  std::uint64_t unit_index;  // position within the scope unit
  std::uint32_t tensor;
  std::uint64_t offset;  // position within the tensor
};

// Smallest-magnitude-first order; lower index first on equal values.
inline bool pos_before(const Candidate& a, const Candidate& b) {
  return a.value < b.value || (a.value == b.value && a.unit_index < b.unit_index);
}
inline bool neg_before(const Candidate& a, const Candidate& b) {
  return a.value > b.value || (a.value == b.value && a.unit_index < b.unit_index);
}

// Clears keep bits of the `drop` first candidates under `before`; returns the
// boundary value of the discarded set (0 when nothing is discarded).
template <typename Before>
float discard_smallest(std::vector<Candidate>& pool, std::uint64_t drop, Before before, PulseMask& mask,
                       bool positive) {
  if (drop == 0) return 0.0f;
  if (drop < pool.size()) {
    std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(drop), pool.end(), before);
  }
  float boundary = 0.0f;
  for (std::uint64_t i = 0; i < drop; ++i) {
    const auto& c = pool[i];
    mask.keep[c.tensor].set(c.offset, false);
    auto& counts = mask.counts[c.tensor];
    if (positive) {
      --counts.kept_pos;
      boundary = std::max(boundary, c.value);
    } else {
      --counts.kept_neg;
      boundary = std::min(boundary, c.value);
    }
  }
  return boundary;
}

}  // namespace detail

/// Keeps, per scope unit, all but the floor(alpha * n_pos) smallest positive
/// and floor(alpha * n_neg) smallest-magnitude negative elements. Exact zeros
/// (and NaNs) are never kept.
inline PulseMask pulse_mask(const NamedTensorSet& tau, double alpha, Scope scope = Scope::kGlobal) {
  check_alpha(alpha);
  require(!tau.empty(), ErrorCode::kInvalidArgument, "task vector is empty");

  PulseMask mask;
  mask.scope = scope;
  mask.keep.reserve(tau.size());
  mask.counts.resize(tau.size());

  for (std::size_t t = 0; t < tau.size(); ++t) {
    const auto& data = tau[t].tensor.data;
    BitVector keep(data.size());
    auto& c = mask.counts[t];
    c.total = data.size();
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (data[j] > 0.0f) {
        keep.set(j);
        ++c.kept_pos;
      } else if (data[j] < 0.0f) {
        keep.set(j);
        ++c.kept_neg;
      }
    }
    mask.keep.push_back(std::move(keep));
  }

  auto process_unit = [&](std::size_t first, std::size_t last) {
    std::vector<detail::Candidate> pos, neg;
    std::uint64_t unit_index = 0;
    for (std::size_t t = first; t < last; ++t) {
      const auto& data = tau[t].tensor.data;
      for (std::size_t j = 0; j < data.size(); ++j, ++unit_index) {
        const float v = data[j];
        if (v > 0.0f) {
          pos.push_back({v, unit_index, static_cast<std::uint32_t>(t), j});
        } else if (v < 0.0f) {
          neg.push_back({v, unit_index, static_cast<std::uint32_t>(t), j});
        }
      }
    }
    Thresholds th;
    th.gamma_u = detail::discard_smallest(pos, discard_count(alpha, pos.size()), detail::pos_before, mask, true);
    th.gamma_l = detail::discard_smallest(neg, discard_count(alpha, neg.size()), detail::neg_before, mask, false);
    mask.thresholds.push_back(th);
  };

  if (scope == Scope::kGlobal) {
    process_unit(0, tau.size());
  } else {
    for (std::size_t t = 0; t < tau.size(); ++t) process_unit(t, t + 1);
  }
  return mask;
}

namespace detail {

template <typename Fn>
NamedTensorSet masked_map(const NamedTensorSet& tau, const PulseMask& mask, Fn&& fn) {
  NamedTensorSet out;
  for (std::size_t t = 0; t < tau.size(); ++t) {
    const auto& data = tau[t].tensor.data;
    std::vector<float> v(data.size());
    for (std::size_t j = 0; j < data.size(); ++j) v[j] = fn(data[j], mask.keep[t].get(j));
    out.add(tau[t].name, tau[t].tensor.shape, std::move(v));
  }
  for (const auto& [k, val] : tau.meta()) out.set_meta(k, val);
  return out;
}

}  // namespace detail

/// Keeps only the high-magnitude pulse; discarded entries become exactly 0.
inline NamedTensorSet p_discard(const NamedTensorSet& tau, double alpha, Scope scope = Scope::kGlobal) {
  const auto mask = pulse_mask(tau, alpha, scope);
  return detail::masked_map(tau, mask, [](float v, bool keep) { return keep ? v : 0.0f; });
}

/// Complement of p_discard on nonzero entries: the high-magnitude pulse is
/// removed, the low-magnitude remainder kept.
inline NamedTensorSet discard_high(const NamedTensorSet& tau, double alpha, Scope scope = Scope::kGlobal) {
  const auto mask = pulse_mask(tau, alpha, scope);
  return detail::masked_map(tau, mask, [](float v, bool keep) { return !keep && v != 0.0f ? v : 0.0f; });
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Uniform [0, 1) draw at position `index` of the stream keyed by `seed`.
inline double counter_uniform(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t x = splitmix64(seed * 0xD1B54A32D192ED03ULL + index * 0x9E3779B97F4A7C15ULL);
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Random drop-and-rescale: each element is zeroed with probability alpha,
/// survivors are multiplied by 1 / (1 - alpha). The draw for an element
/// depends only on (seed, flat element index).
inline NamedTensorSet dare_discard(const NamedTensorSet& tau, double alpha, std::uint64_t seed) {
  check_alpha(alpha);
  const auto rescale = static_cast<float>(1.0 / (1.0 - alpha));
  NamedTensorSet out;
  std::uint64_t flat = 0;
  for (const auto& e : tau.entries()) {
    std::vector<float> v(e.tensor.numel());
    for (std::size_t j = 0; j < v.size(); ++j, ++flat) {
      const bool drop = alpha > 0.0 && detail::counter_uniform(seed, flat) < alpha;
      v[j] = drop ? 0.0f : (alpha > 0.0 ? e.tensor.data[j] * rescale : e.tensor.data[j]);
    }
    out.add(e.name, e.tensor.shape, std::move(v));
  }
  for (const auto& [k, val] : tau.meta()) out.set_meta(k, val);
  return out;
}

}  // namespace tsw
