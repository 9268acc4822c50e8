#pragma once

// TSW container: "TSW1", u8 scope, f32 alpha, u32 tensor count, 16-byte base
// fingerprint; per tensor u16 name length + name, u8 rank + u64 dims, u64
// active count k, ceil(n/8) mask bytes, ceil(k/8) polarity bytes and, for
// per-tensor scope, one f32 knob. Global scope stores a single f32 knob after
// the table.

#include <filesystem>

#include "tsw/binarize.hpp"
#include "tsw/binio.hpp"
#include "tsw/fileio.hpp"

namespace tsw {

inline constexpr char kTswMagic[4] = {'T', 'S', 'W', '1'};

inline std::vector<std::uint8_t> encode_tsw(const TaskSwitchPack& pack) {
  validate_pack(pack);
  binio::Writer w;
  w.bytes(std::string_view(kTswMagic, 4));
  w.put(static_cast<std::uint8_t>(pack.scope));
  w.put(pack.alpha);
  w.put(static_cast<std::uint32_t>(pack.tensors.size()));
  w.bytes(pack.base_fingerprint.bytes);
  std::vector<std::uint8_t> bits;
  for (std::size_t t = 0; t < pack.tensors.size(); ++t) {
    const auto& st = pack.tensors[t];
    require(st.name.size() <= UINT16_MAX && st.shape.size() <= UINT8_MAX, ErrorCode::kInvalidArgument,
            "tensor name or rank too large");
    w.put(static_cast<std::uint16_t>(st.name.size()));
    w.bytes(st.name);
    w.put(static_cast<std::uint8_t>(st.shape.size()));
    for (auto d : st.shape) w.put(d);
    w.put(static_cast<std::uint64_t>(st.polarity.size()));
    bits.clear();
    st.activation.append_bytes(bits);
    st.polarity.append_bytes(bits);
    w.bytes(bits);
    if (pack.scope == Scope::kPerTensor) w.put(pack.knobs[t]);
  }
  if (pack.scope == Scope::kGlobal) w.put(pack.knobs.at(0));
  return std::move(w).take();
}

inline TaskSwitchPack decode_tsw(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  require(r.string(4, "TSW magic") == std::string_view(kTswMagic, 4), ErrorCode::kBadMagic, "not a TSW1 file");
  TaskSwitchPack pack;
  const auto scope = r.get<std::uint8_t>("scope");
  require(scope <= 1, ErrorCode::kCorruptPack, "unknown scope " + std::to_string(scope));
  pack.scope = static_cast<Scope>(scope);
  pack.alpha = r.get<float>("alpha");
  const auto count = r.get<std::uint32_t>("tensor count");
  const auto fp = r.bytes(16, "base fingerprint");
  std::copy(fp.begin(), fp.end(), pack.base_fingerprint.bytes.begin());
  for (std::uint32_t i = 0; i < count; ++i) {
    SwitchTensor st;
    st.name = r.string(r.get<std::uint16_t>("name length"), "tensor name");
    st.shape.resize(r.get<std::uint8_t>("rank"));
    for (auto& d : st.shape) d = r.get<std::uint64_t>("dimension");
    const auto n = shape_numel(st.shape);
    const auto k = r.get<std::uint64_t>("active count");
    require(n / 8 <= r.remaining(), ErrorCode::kTruncated, st.name + ": mask stream truncated");
    st.activation = BitVector::from_bytes(r.bytes((n + 7) / 8, "activation mask"), n);
    require(st.activation.popcount() == k, ErrorCode::kPopcountMismatch,
            st.name + ": header declares " + std::to_string(k) + " active, mask has " +
                std::to_string(st.activation.popcount()));
    st.polarity = BitVector::from_bytes(r.bytes((k + 7) / 8, "polarity stream"), k);
    pack.tensors.push_back(std::move(st));
    if (pack.scope == Scope::kPerTensor) pack.knobs.push_back(r.get<float>("knob"));
  }
  if (pack.scope == Scope::kGlobal) pack.knobs.push_back(r.get<float>("knob"));
  r.expect_end("TSW");
  validate_pack(pack);
  return pack;
}

inline void encode_tsw(const TaskSwitchPack& pack, const std::filesystem::path& path) {
  write_file_atomic(path, encode_tsw(pack));
}

inline TaskSwitchPack decode_tsw(const std::filesystem::path& path) { return decode_tsw(read_file(path)); }

}  // namespace tsw
