#pragma once

// Little-endian byte encoding shared by the NTC, TSW and TQI containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "tsw/error.hpp"

namespace tsw::binio {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void floats(std::span<const float> f) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(f.data());
    buf_.insert(buf_.end(), p, p + f.size_bytes());
  }

  const std::vector<std::uint8_t>& buffer() const& { return buf_; }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::string string(std::size_t n, const char* what) {
    auto s = bytes(n, what);
    return {reinterpret_cast<const char*>(s.data()), s.size()};
  }

  void floats(std::span<float> out, const char* what) {
    auto s = bytes(out.size_bytes(), what);
    std::memcpy(out.data(), s.data(), s.size());
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void expect_end(const char* what) const {
    require(remaining() == 0, ErrorCode::kTrailingData,
            std::string(what) + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      fail(ErrorCode::kTruncated, std::string(what) + ": need " + std::to_string(n) + " bytes at offset " +
                                      std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace tsw::binio
