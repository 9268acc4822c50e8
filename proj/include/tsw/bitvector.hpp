#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tsw/error.hpp"

namespace tsw {

/// Fixed-length packed bit vector. Serialized LSB-first within each byte,
/// bytes in ascending bit order; unused high bits of the last byte are zero.
class BitVector {
 public:
  BitVector() = default;
  explicit BitVector(std::size_t n) : size_(n), words_((n + 63) / 64, 0) {}

  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  bool get(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1u; }

  void set(std::size_t i, bool v = true) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (v) {
      words_[i >> 6] |= bit;
    } else {
      words_[i >> 6] &= ~bit;
    }
  }

  std::size_t popcount() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  /// Calls fn(index) for every set bit in ascending order.
  template <typename Fn>
  void for_each_set(Fn&& fn) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits != 0) {
        const int b = std::countr_zero(bits);
        fn(w * 64 + static_cast<std::size_t>(b));
        bits &= bits - 1;
      }
    }
  }

  std::size_t byte_size() const noexcept { return (size_ + 7) / 8; }

  void append_bytes(std::vector<std::uint8_t>& out) const {
    const std::size_t nbytes = byte_size();
    for (std::size_t b = 0; b < nbytes; ++b) {
      out.push_back(static_cast<std::uint8_t>(words_[b >> 3] >> (8 * (b & 7))));
    }
  }

  /// Inverse of append_bytes. Non-zero padding bits are rejected so that the
  /// encoding is a bijection.
  static BitVector from_bytes(std::span<const std::uint8_t> bytes, std::size_t n) {
    require(bytes.size() == (n + 7) / 8, ErrorCode::kTruncated, "bitset byte count does not match bit length");
    BitVector bv(n);
    for (std::size_t b = 0; b < bytes.size(); ++b) {
      bv.words_[b >> 3] |= std::uint64_t{bytes[b]} << (8 * (b & 7));
    }
    if (n % 8 != 0 && !bytes.empty()) {
      const auto pad_mask = static_cast<std::uint8_t>(0xFFu << (n % 8));
      require((bytes.back() & pad_mask) == 0, ErrorCode::kCorruptPack, "non-zero padding bits in bitset");
    }
    return bv;
  }

  friend bool operator==(const BitVector&, const BitVector&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace tsw
