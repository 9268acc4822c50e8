#pragma once

#include "tsw/tensor.hpp"

namespace tsw {

/// tau = finetuned - base, elementwise per tensor. The result carries
/// `kind=task_vector` and the base fingerprint in its metadata.
inline NamedTensorSet compute_task_vector(const NamedTensorSet& base, const NamedTensorSet& finetuned) {
  require_same_structure(base, finetuned, "finetuned checkpoint does not match base");
  NamedTensorSet tau;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& b = base[i].tensor.data;
    const auto& f = finetuned[i].tensor.data;
    std::vector<float> d(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) d[j] = f[j] - b[j];
    tau.add(base[i].name, base[i].tensor.shape, std::move(d));
  }
  tau.set_meta("kind", "task_vector");
  tau.set_meta("base_fingerprint", base.fingerprint().hex());
  return tau;
}

/// base + delta, elementwise float addition. Metadata is taken from base.
inline NamedTensorSet add_delta(const NamedTensorSet& base, const NamedTensorSet& delta) {
  require_same_structure(base, delta, "delta does not match base");
  NamedTensorSet out;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& b = base[i].tensor.data;
    const auto& d = delta[i].tensor.data;
    std::vector<float> v(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) v[j] = b[j] + d[j];
    out.add(base[i].name, base[i].tensor.shape, std::move(v));
  }
  for (const auto& [k, v] : base.meta()) out.set_meta(k, v);
  return out;
}

/// Dense scale * (down . up) for a rank-r factorization, down: d x r, up: r x k.
inline Tensor materialize_lowrank(const Tensor& down, const Tensor& up, float scale) {
  require(down.shape.size() == 2 && up.shape.size() == 2, ErrorCode::kDimensionMismatch,
          "low-rank factors must be matrices");
  const auto d = down.shape[0];
  const auto r = down.shape[1];
  const auto k = up.shape[1];
  require(r >= 1 && up.shape[0] == r, ErrorCode::kDimensionMismatch,
          "inner dimensions disagree: " + std::to_string(r) + " vs " + std::to_string(up.shape[0]));
  Tensor out = Tensor::zeros({d, k});
  for (std::uint64_t i = 0; i < d; ++i) {
    for (std::uint64_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::uint64_t t = 0; t < r; ++t) {
        acc += static_cast<double>(down.data[i * r + t]) * static_cast<double>(up.data[t * k + j]);
      }
      out.data[i * k + j] = static_cast<float>(static_cast<double>(scale) * acc);
    }
  }
  return out;
}

}  // namespace tsw
