#pragma once

// NTC container: "NTC1", u32 entry count, entries (u16 name length, name,
// u8 rank, rank x u64 dims, f32 payload), u32 meta count, then meta pairs as
// (u16 length + bytes) key followed by (u16 length + bytes) value. Little
// endian, no padding.

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "tsw/binio.hpp"
#include "tsw/fileio.hpp"
#include "tsw/tensor.hpp"

namespace tsw {

inline constexpr char kNtcMagic[4] = {'N', 'T', 'C', '1'};

inline std::vector<std::uint8_t> encode_ntc(const NamedTensorSet& set) {
  binio::Writer w;
  w.bytes(std::string_view(kNtcMagic, 4));
  w.put(static_cast<std::uint32_t>(set.size()));
  for (const auto& e : set.entries()) {
    require(e.name.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::kInvalidArgument,
            "tensor name too long");
    require(e.tensor.shape.size() <= std::numeric_limits<std::uint8_t>::max(), ErrorCode::kInvalidArgument,
            "tensor rank too large");
    w.put(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.put(static_cast<std::uint8_t>(e.tensor.shape.size()));
    for (auto d : e.tensor.shape) w.put(d);
    w.floats(e.tensor.data);
  }
  w.put(static_cast<std::uint32_t>(set.meta().size()));
  for (const auto& [k, v] : set.meta()) {
    require(k.size() <= UINT16_MAX && v.size() <= UINT16_MAX, ErrorCode::kInvalidArgument, "meta entry too long");
    w.put(static_cast<std::uint16_t>(k.size()));
    w.bytes(k);
    w.put(static_cast<std::uint16_t>(v.size()));
    w.bytes(v);
  }
  return std::move(w).take();
}

inline NamedTensorSet decode_ntc(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  const auto magic = r.string(4, "NTC magic");
  require(magic == std::string_view(kNtcMagic, 4), ErrorCode::kBadMagic, "not an NTC1 file");
  const auto count = r.get<std::uint32_t>("entry count");
  NamedTensorSet set;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("name length");
    auto name = r.string(name_len, "tensor name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("dimension");
    const auto n = shape_numel(shape);
    require(n <= r.remaining() / sizeof(float), ErrorCode::kTruncated,
            name + ": payload declares " + std::to_string(n) + " floats, file has fewer");
    std::vector<float> data(n);
    r.floats(data, "tensor payload");
    set.add(std::move(name), std::move(shape), std::move(data));
  }
  const auto meta_count = r.get<std::uint32_t>("meta count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    auto key = r.string(r.get<std::uint16_t>("meta key length"), "meta key");
    auto value = r.string(r.get<std::uint16_t>("meta value length"), "meta value");
    set.set_meta(key, std::move(value));
  }
  r.expect_end("NTC");
  return set;
}

inline NamedTensorSet load_ntc(const std::filesystem::path& path) { return decode_ntc(read_file(path)); }

inline void save_ntc(const NamedTensorSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, encode_ntc(set));
}

}  // namespace tsw
