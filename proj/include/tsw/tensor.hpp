#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsw/error.hpp"

namespace tsw {

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t shape_numel(const Shape& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    require(d > 0, ErrorCode::kShapeMismatch, "dimensions must be positive");
    require(n <= UINT64_MAX / d, ErrorCode::kShapeMismatch, "element count overflows");
    n *= d;
  }
  return n;
}

struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(Shape s) {
    const auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(n, 0.0f));
  }

  std::size_t numel() const noexcept { return data.size(); }
};

/// 128-bit structural digest over ordered tensor names and shapes (FNV-1a 128).
struct Fingerprint {
  std::array<std::uint8_t, 16> bytes{};

  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(32);
    for (auto b : bytes) {
      s.push_back(kDigits[b >> 4]);
      s.push_back(kDigits[b & 15]);
    }
    return s;
  }

  static std::optional<Fingerprint> from_hex(std::string_view s) {
    if (s.size() != 32) return std::nullopt;
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      return -1;
    };
    Fingerprint fp;
    for (std::size_t i = 0; i < 16; ++i) {
      const int hi = nibble(s[2 * i]);
      const int lo = nibble(s[2 * i + 1]);
      if (hi < 0 || lo < 0) return std::nullopt;
      fp.bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return fp;
  }

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

namespace detail {

class Fnv128 {
 public:
  void update(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= b[i];
      state_ *= kPrime;
    }
  }
  template <typename T>
  void update_value(T v) {
    update(&v, sizeof(v));
  }

  Fingerprint digest() const {
    Fingerprint fp;
    for (std::size_t i = 0; i < 16; ++i) fp.bytes[i] = static_cast<std::uint8_t>(state_ >> (8 * (15 - i)));
    return fp;
  }

 private:
  static constexpr unsigned __int128 kPrime = (static_cast<unsigned __int128>(1) << 88) + 0x13B;
  unsigned __int128 state_ =
      (static_cast<unsigned __int128>(0x6c62272e07bb0142ULL) << 64) | static_cast<unsigned __int128>(0x62b821756295c58dULL);
};

}  // namespace detail

/// Accumulates the structural digest of a tensor table one entry at a time.
class FingerprintBuilder {
 public:
  explicit FingerprintBuilder(std::size_t count) { h_.update_value(static_cast<std::uint32_t>(count)); }

  void add(std::string_view name, const Shape& shape) {
    h_.update_value(static_cast<std::uint16_t>(name.size()));
    h_.update(name.data(), name.size());
    h_.update_value(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) h_.update_value(d);
  }

  Fingerprint digest() const { return h_.digest(); }

 private:
  detail::Fnv128 h_;
};

/// Ordered collection of named float tensors plus free-form string metadata.
/// Entry order and meta order are preserved exactly.
class NamedTensorSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };
  using Meta = std::vector<std::pair<std::string, std::string>>;

  void add(std::string name, Tensor t) {
    require(index_.find(name) == index_.end(), ErrorCode::kDuplicateName, name);
    require(shape_numel(t.shape) == t.data.size(), ErrorCode::kShapeMismatch,
            name + ": data length " + std::to_string(t.data.size()) + " does not match shape");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(t)});
  }

  void add(std::string name, Shape shape, std::vector<float> data) {
    add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  const Tensor* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
  }
  Tensor* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
  }

  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    require(t != nullptr, ErrorCode::kInvalidArgument, "no tensor named '" + std::string(name) + "'");
    return *t;
  }

  std::size_t total_numel() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  const Meta& meta() const noexcept { return meta_; }

  std::optional<std::string> get_meta(std::string_view key) const {
    for (const auto& [k, v] : meta_) {
      if (k == key) return v;
    }
    return std::nullopt;
  }

  void set_meta(const std::string& key, std::string value) {
    for (auto& [k, v] : meta_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    meta_.emplace_back(key, std::move(value));
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      for (float v : e.tensor.data) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  /// Structural digest; independent of values and metadata.
  Fingerprint fingerprint() const {
    FingerprintBuilder fb(entries_.size());
    for (const auto& e : entries_) fb.add(e.name, e.tensor.shape);
    return fb.digest();
  }

  /// Same names and shapes, every value zero, no metadata.
  NamedTensorSet zeros_like() const {
    NamedTensorSet out;
    for (const auto& e : entries_) out.add(e.name, Tensor::zeros(e.tensor.shape));
    return out;
  }

  friend bool operator==(const NamedTensorSet& a, const NamedTensorSet& b) {
    if (a.entries_.size() != b.entries_.size() || a.meta_ != b.meta_) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.tensor.shape != y.tensor.shape) return false;
      if (x.tensor.data.size() != y.tensor.data.size()) return false;
      for (std::size_t j = 0; j < x.tensor.data.size(); ++j) {
        if (std::bit_cast<std::uint32_t>(x.tensor.data[j]) != std::bit_cast<std::uint32_t>(y.tensor.data[j])) {
          return false;
        }
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Meta meta_;
};

inline void require_same_structure(const NamedTensorSet& a, const NamedTensorSet& b, const std::string& what) {
  require(a.fingerprint() == b.fingerprint(), ErrorCode::kFingerprintMismatch, what);
}

/// Visits every element of every tensor in stored order with its flat index
/// across the whole set.
template <typename Fn>
void for_each_flat(const NamedTensorSet& set, Fn&& fn) {
  std::size_t flat = 0;
  for (const auto& e : set.entries()) {
    for (float v : e.tensor.data) fn(flat++, v);
  }
}

}  // namespace tsw
