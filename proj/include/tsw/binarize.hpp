#pragma once

// Binarized task vectors ("task switches"): an activation mask selecting the
// high-magnitude pulse, a polarity bit per active position, and a scalar knob
// restoring the l2 length of the kept entries.

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "tsw/bitvector.hpp"
#include "tsw/pulse.hpp"
#include "tsw/tensor.hpp"

namespace tsw {

struct SwitchTensor {
  std::string name;
  Shape shape;
  BitVector activation;  // n bits, 1 = active
  BitVector polarity;    // k = popcount(activation) bits, 1 = +1, 0 = -1

  friend bool operator==(const SwitchTensor&, const SwitchTensor&) = default;
};

struct TaskSwitchPack {
  Scope scope = Scope::kGlobal;
  float alpha = 0.0f;
  Fingerprint base_fingerprint;
  std::vector<SwitchTensor> tensors;
  std::vector<float> knobs;  // one for kGlobal, one per tensor for kPerTensor

  float knob_for(std::size_t tensor) const { return scope == Scope::kGlobal ? knobs.at(0) : knobs.at(tensor); }

  std::uint64_t total_params() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors) n += t.activation.size();
    return n;
  }

  std::uint64_t total_active() const {
    std::uint64_t k = 0;
    for (const auto& t : tensors) k += t.polarity.size();
    return k;
  }

  Fingerprint structure_fingerprint() const {
    FingerprintBuilder fb(tensors.size());
    for (const auto& t : tensors) fb.add(t.name, t.shape);
    return fb.digest();
  }

  friend bool operator==(const TaskSwitchPack& a, const TaskSwitchPack& b) {
    if (a.scope != b.scope || a.base_fingerprint != b.base_fingerprint || a.tensors != b.tensors) return false;
    if (std::bit_cast<std::uint32_t>(a.alpha) != std::bit_cast<std::uint32_t>(b.alpha)) return false;
    if (a.knobs.size() != b.knobs.size()) return false;
    for (std::size_t i = 0; i < a.knobs.size(); ++i) {
      if (std::bit_cast<std::uint32_t>(a.knobs[i]) != std::bit_cast<std::uint32_t>(b.knobs[i])) return false;
    }
    return true;
  }
};

/// Throws kPopcountMismatch / kCorruptPack / kDuplicateName on an
/// inconsistent pack.
inline void validate_pack(const TaskSwitchPack& pack) {
  require(pack.alpha >= 0.0f && pack.alpha < 1.0f, ErrorCode::kCorruptPack, "alpha outside [0, 1)");
  const std::size_t units = pack.scope == Scope::kGlobal ? 1 : pack.tensors.size();
  require(pack.knobs.size() == units, ErrorCode::kCorruptPack, "knob count does not match scope");
  std::set<std::string, std::less<>> names;
  for (const auto& t : pack.tensors) {
    require(names.insert(t.name).second, ErrorCode::kDuplicateName, t.name);
    require(shape_numel(t.shape) == t.activation.size(), ErrorCode::kShapeMismatch, t.name);
    require(t.activation.popcount() == t.polarity.size(), ErrorCode::kPopcountMismatch,
            t.name + ": active count " + std::to_string(t.activation.popcount()) + " vs polarity length " +
                std::to_string(t.polarity.size()));
  }
  for (std::size_t u = 0; u < units; ++u) {
    const float lambda = pack.knobs[u];
    require(std::isfinite(lambda) && lambda >= 0.0f, ErrorCode::kCorruptPack, "knob must be finite and >= 0");
    std::uint64_t k = 0;
    if (pack.scope == Scope::kGlobal) {
      k = pack.total_active();
    } else {
      k = pack.tensors[u].polarity.size();
    }
    require((lambda == 0.0f) == (k == 0), ErrorCode::kCorruptPack, "knob is zero iff the unit has no active elements");
  }
  require(pack.structure_fingerprint() == pack.base_fingerprint, ErrorCode::kCorruptPack,
          "tensor table does not match recorded base fingerprint");
}

/// Dense ±lambda at active positions, exactly 0 elsewhere.
inline NamedTensorSet reconstruct(const TaskSwitchPack& pack) {
  validate_pack(pack);
  NamedTensorSet out;
  for (std::size_t t = 0; t < pack.tensors.size(); ++t) {
    const auto& st = pack.tensors[t];
    const float lambda = pack.knob_for(t);
    std::vector<float> v(st.activation.size(), 0.0f);
    std::size_t p = 0;
    st.activation.for_each_set([&](std::size_t j) { v[j] = st.polarity.get(p++) ? lambda : -lambda; });
    out.add(st.name, st.shape, std::move(v));
  }
  out.set_meta("kind", "task_vector");
  out.set_meta("base_fingerprint", pack.base_fingerprint.hex());
  return out;
}

struct BinDiscardResult {
  TaskSwitchPack pack;
  NamedTensorSet reconstruction;
};

namespace detail {

// ||tau . g_m||_2 / ||g_m . g_b||_2 with a fixed ascending summation order.
inline float switch_knob(double sum_sq, std::uint64_t k) {
  if (k == 0) return 0.0f;
  const double lambda = std::sqrt(sum_sq) / std::sqrt(static_cast<double>(k));
  return std::max(static_cast<float>(lambda), std::numeric_limits<float>::denorm_min());
}

}  // namespace detail

/// Pulse-masks tau, binarizes the kept entries by sign and rescales them by
/// the switch knob of their scope unit.
inline BinDiscardResult bin_discard(const NamedTensorSet& tau, double alpha, Scope scope = Scope::kGlobal) {
  const auto mask = pulse_mask(tau, alpha, scope);

  TaskSwitchPack pack;
  pack.scope = scope;
  pack.alpha = std::min(static_cast<float>(alpha), std::nextafter(1.0f, 0.0f));
  pack.base_fingerprint = tau.fingerprint();

  std::vector<double> unit_sum_sq(scope == Scope::kGlobal ? 1 : tau.size(), 0.0);
  std::vector<std::uint64_t> unit_k(unit_sum_sq.size(), 0);

  for (std::size_t t = 0; t < tau.size(); ++t) {
    const auto& data = tau[t].tensor.data;
    const auto& keep = mask.keep[t];
    const std::size_t u = scope == Scope::kGlobal ? 0 : t;
    SwitchTensor st{tau[t].name, tau[t].tensor.shape, keep, BitVector(keep.popcount())};
    std::size_t p = 0;
    keep.for_each_set([&](std::size_t j) {
      const double v = data[j];
      unit_sum_sq[u] += v * v;
      // sign rule: +1 iff strictly positive
      st.polarity.set(p++, data[j] > 0.0f);
    });
    unit_k[u] += p;
    pack.tensors.push_back(std::move(st));
  }
  for (std::size_t u = 0; u < unit_sum_sq.size(); ++u) {
    pack.knobs.push_back(detail::switch_knob(unit_sum_sq[u], unit_k[u]));
  }

  auto recon = reconstruct(pack);
  return {std::move(pack), std::move(recon)};
}

struct StorageReport {
  std::uint64_t bytes_serialized = 0;
  std::uint64_t params = 0;
  double bits_per_parameter = 0.0;
  double ratio_vs_fp32 = 0.0;
};

/// Exact size of the TSW encoding of `pack`.
inline std::uint64_t tsw_encoded_size(const TaskSwitchPack& pack) {
  std::uint64_t bytes = 4 + 1 + 4 + 4 + 16;
  for (const auto& t : pack.tensors) {
    bytes += 2 + t.name.size() + 1 + 8 * t.shape.size() + 8;
    bytes += t.activation.byte_size() + t.polarity.byte_size();
    if (pack.scope == Scope::kPerTensor) bytes += 4;
  }
  if (pack.scope == Scope::kGlobal) bytes += 4;
  return bytes;
}

/// Bits per parameter are 0 for a pack without parameters.
inline StorageReport storage_report(const TaskSwitchPack& pack) {
  StorageReport r;
  r.bytes_serialized = tsw_encoded_size(pack);
  r.params = pack.total_params();
  if (r.params > 0) {
    r.bits_per_parameter = 8.0 * static_cast<double>(r.bytes_serialized) / static_cast<double>(r.params);
    r.ratio_vs_fp32 = r.bits_per_parameter / 32.0;
  }
  return r;
}

}  // namespace tsw
