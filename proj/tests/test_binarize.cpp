#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tsw/binarize.hpp"
#include "tsw/tsw_format.hpp"

using tsw::Scope;
using tsw::TaskSwitchPack;

namespace {

TaskSwitchPack make_pack(std::vector<int> mask, std::vector<int> signs, float lambda) {
  TaskSwitchPack p;
  tsw::SwitchTensor st{"w", {mask.size()}, tsw::BitVector(mask.size()), tsw::BitVector(signs.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) st.activation.set(i, mask[i] != 0);
  for (std::size_t i = 0; i < signs.size(); ++i) st.polarity.set(i, signs[i] > 0);
  p.tensors.push_back(std::move(st));
  p.knobs = {lambda};
  p.base_fingerprint = p.structure_fingerprint();
  return p;
}

tsw::ErrorCode decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    tsw::decode_tsw(bytes);
  } catch (const tsw::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return tsw::ErrorCode::kInternal;
}

// Random set with sprinkled exact zeros.
tsw::NamedTensorSet fuzz_tau(std::mt19937_64& gen, std::size_t tensors, std::size_t max_numel) {
  auto tau = testutil::random_set(gen, tensors, max_numel);
  for (std::size_t t = 0; t < tau.size(); ++t) {
    for (auto& v : tau[t].tensor.data) {
      if (gen() % 7 == 0) v = 0.0f;
    }
  }
  return tau;
}

}  // namespace

TEST(BinDiscard, WorkedExample) {
  const auto r = tsw::bin_discard(testutil::single({0.4f, -0.1f, 0.25f, -0.3f, 0.05f, -0.2f}), 0.5);
  const double lambda = std::sqrt((0.4 * 0.4 + 0.25 * 0.25 + 0.3 * 0.3 + 0.2 * 0.2) / 4.0);
  EXPECT_NEAR(lambda, 0.29686, 5e-6);
  ASSERT_EQ(r.pack.knobs.size(), 1u);
  EXPECT_NEAR(r.pack.knobs[0], lambda, 1e-7);
  const float l = r.pack.knobs[0];
  EXPECT_EQ(testutil::values(r.reconstruction), (std::vector<float>{l, 0, l, -l, 0, -l}));
  EXPECT_EQ(r.pack.tensors[0].polarity.size(), 4u);
}

TEST(BinDiscard, DegenerateInputs) {
  const auto zero = tsw::bin_discard(testutil::single({0, 0, 0}), 0.5);
  EXPECT_EQ(zero.pack.total_active(), 0u);
  EXPECT_EQ(zero.pack.knobs[0], 0.0f);
  EXPECT_EQ(testutil::values(zero.reconstruction), (std::vector<float>{0, 0, 0}));

  const auto constant = testutil::single(std::vector<float>(17, 0.375f));
  const auto r = tsw::bin_discard(constant, 0.0);
  EXPECT_EQ(r.pack.knobs[0], 0.375f);
  EXPECT_EQ(testutil::values(r.reconstruction), testutil::values(constant));
}

TEST(BinDiscard, PerTensorKnobs) {
  tsw::NamedTensorSet tau;
  tau.add("a", {2}, {1.0f, -1.0f});
  tau.add("b", {2}, {0.0f, 0.0f});
  tau.add("c", {3}, {3.0f, -4.0f, 0.0f});
  const auto r = tsw::bin_discard(tau, 0.0, Scope::kPerTensor);
  ASSERT_EQ(r.pack.knobs.size(), 3u);
  EXPECT_EQ(r.pack.knobs[0], 1.0f);
  EXPECT_EQ(r.pack.knobs[1], 0.0f);
  EXPECT_FLOAT_EQ(r.pack.knobs[2], static_cast<float>(std::sqrt(12.5)));
}

TEST(BinDiscard, FidelityProperties) {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 60; ++trial) {
    const auto tau = fuzz_tau(gen, 1 + trial % 4, 3000);
    const double alpha = (trial % 10) / 10.0;
    for (Scope scope : {Scope::kGlobal, Scope::kPerTensor}) {
      const auto r = tsw::bin_discard(tau, alpha, scope);
      const auto mask = tsw::pulse_mask(tau, alpha, scope);
      const std::size_t units = scope == Scope::kGlobal ? 1 : tau.size();
      std::vector<long double> kept_sq(units, 0), recon_sq(units, 0);
      std::vector<std::size_t> kept_n(units, 0);
      for (std::size_t t = 0; t < tau.size(); ++t) {
        const std::size_t u = scope == Scope::kGlobal ? 0 : t;
        ASSERT_EQ(r.pack.tensors[t].activation, mask.keep[t]);
        for (std::size_t i = 0; i < tau[t].tensor.numel(); ++i) {
          const float v = tau[t].tensor.data[i];
          const float h = r.reconstruction[t].tensor.data[i];
          if (mask.keep[t].get(i)) {
            ASSERT_EQ(std::signbit(h), std::signbit(v));
            ASSERT_NE(h, 0.0f);
            kept_sq[u] += static_cast<long double>(v) * v;
            ++kept_n[u];
          } else {
            ASSERT_EQ(h, 0.0f);
          }
          recon_sq[u] += static_cast<long double>(h) * h;
        }
      }
      for (std::size_t u = 0; u < units; ++u) {
        const float lambda = r.pack.knobs[u];
        if (kept_n[u] == 0) {
          EXPECT_EQ(lambda, 0.0f);
          continue;
        }
        const double rms = static_cast<double>(std::sqrt(kept_sq[u] / kept_n[u]));
        EXPECT_LE(std::abs(lambda - rms), 1e-6 * std::max(1.0, rms));
        const double kept_norm = static_cast<double>(std::sqrt(kept_sq[u]));
        const double recon_norm = static_cast<double>(std::sqrt(recon_sq[u]));
        EXPECT_LE(std::abs(recon_norm - kept_norm), 1e-5 * kept_norm);
      }
    }
  }
}

TEST(Reconstruct, Examples) {
  const auto pack = make_pack({1, 0, 1}, {+1, -1}, 0.5f);
  EXPECT_EQ(testutil::values(tsw::reconstruct(pack)), (std::vector<float>{0.5f, 0, -0.5f}));

  const auto empty = make_pack({0, 0}, {}, 0.0f);
  EXPECT_EQ(testutil::values(tsw::reconstruct(empty)), (std::vector<float>{0, 0}));
}

TEST(Reconstruct, RejectsInconsistentPacks) {
  auto pack = make_pack({1, 0, 1}, {+1, -1}, 0.5f);
  pack.tensors[0].activation.set(1);
  try {
    tsw::reconstruct(pack);
    FAIL();
  } catch (const tsw::Error& e) {
    EXPECT_EQ(e.code(), tsw::ErrorCode::kPopcountMismatch);
  }
  auto zero_knob = make_pack({1, 0, 1}, {+1, -1}, 0.0f);
  EXPECT_THROW(tsw::reconstruct(zero_knob), tsw::Error);
  auto positive_empty = make_pack({0, 0}, {}, 1.0f);
  EXPECT_THROW(tsw::reconstruct(positive_empty), tsw::Error);
}

TEST(TswFormat, HandComputedLayout) {
  const auto pack = make_pack({1, 0, 1}, {+1, -1}, 0.5f);
  const auto bytes = tsw::encode_tsw(pack);
  // header 29 + (name 2+1) + (rank 1 + dim 8) + k 8 + mask 1 + polarity 1 + knob 4
  ASSERT_EQ(bytes.size(), 29u + 3 + 9 + 8 + 1 + 1 + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TSW1");
  EXPECT_EQ(bytes[4], 0);  // global scope
  const std::size_t mask_at = 29 + 3 + 9 + 8;
  EXPECT_EQ(bytes[mask_at], 0b101);
  EXPECT_EQ(bytes[mask_at + 1], 0b01);
  EXPECT_EQ(bytes.size(), tsw::tsw_encoded_size(pack));
  EXPECT_EQ(tsw::decode_tsw(bytes), pack);
}

TEST(TswFormat, EmptyPackIsHeaderOnly) {
  TaskSwitchPack empty;
  empty.knobs = {0.0f};
  empty.base_fingerprint = empty.structure_fingerprint();
  const auto bytes = tsw::encode_tsw(empty);
  EXPECT_EQ(bytes.size(), 33u);
  EXPECT_EQ(tsw::decode_tsw(bytes), empty);
  const auto rep = tsw::storage_report(empty);
  EXPECT_EQ(rep.bytes_serialized, 33u);
  EXPECT_EQ(rep.bits_per_parameter, 0.0);
}

TEST(TswFormat, CorruptFilesAreRejected) {
  const auto good = tsw::encode_tsw(make_pack({1, 0, 1, 1, 1, 1, 1, 1, 1, 1}, {1, 1, 0, 0, 1, 1, 0, 1, 1}, 2.0f));
  const std::size_t mask_at = 29 + 3 + 9 + 8;

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_error(magic), tsw::ErrorCode::kBadMagic);

  // Polarity needs 2 bytes; cut the file inside the polarity stream.
  auto short_polarity = good;
  short_polarity.resize(mask_at + 2 + 1);
  EXPECT_EQ(decode_error(short_polarity), tsw::ErrorCode::kTruncated);

  auto cleared_bit = good;
  cleared_bit[mask_at] &= static_cast<std::uint8_t>(~1u);
  EXPECT_EQ(decode_error(cleared_bit), tsw::ErrorCode::kPopcountMismatch);

  auto padding = good;
  padding[mask_at + 1] |= 0x80;
  EXPECT_EQ(decode_error(padding), tsw::ErrorCode::kCorruptPack);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), tsw::ErrorCode::kTrailingData);

  auto nan_knob = good;
  nan_knob[nan_knob.size() - 1] = 0x7f;
  nan_knob[nan_knob.size() - 2] = 0xc0;
  EXPECT_EQ(decode_error(nan_knob), tsw::ErrorCode::kCorruptPack);

  auto fingerprint = good;
  fingerprint[13] ^= 1;
  EXPECT_EQ(decode_error(fingerprint), tsw::ErrorCode::kCorruptPack);

  auto scope = good;
  scope[4] = 7;
  EXPECT_EQ(decode_error(scope), tsw::ErrorCode::kCorruptPack);
}

TEST(TswFormat, FuzzRoundTripIsBitExact) {
  std::mt19937_64 gen(99);
  const auto dir = testutil::scratch_dir("tsw");
  for (int trial = 0; trial < 200; ++trial) {
    const auto tau = fuzz_tau(gen, 1 + gen() % 5, 700);
    const double alpha = static_cast<double>(gen() % 1000) / 1000.0;
    const Scope scope = trial % 2 ? Scope::kGlobal : Scope::kPerTensor;
    const auto r = tsw::bin_discard(tau, alpha, scope);
    const auto path = dir / "p.tsw";
    tsw::encode_tsw(r.pack, path);
    const auto back = tsw::decode_tsw(path);
    ASSERT_EQ(back, r.pack) << "trial " << trial;
    ASSERT_EQ(tsw::reconstruct(back), r.reconstruction) << "trial " << trial;
    ASSERT_EQ(std::filesystem::file_size(path), tsw::storage_report(back).bytes_serialized);
  }
}

TEST(Storage, FormatArithmetic) {
  const std::size_t n = 1000000;
  std::mt19937_64 gen(5);
  std::normal_distribution<float> val;
  std::vector<float> v(n);
  for (auto& x : v) {
    do {
      x = val(gen);
    } while (x == 0.0f);
  }
  const auto tau = testutil::single(v);
  double previous = 1e9;
  for (double alpha : {0.0, 0.2, 0.5, 0.8}) {
    const auto rep = tsw::storage_report(tsw::bin_discard(tau, alpha).pack);
    EXPECT_LT(rep.bits_per_parameter, previous);
    previous = rep.bits_per_parameter;
    EXPECT_DOUBLE_EQ(rep.ratio_vs_fp32, rep.bits_per_parameter / 32.0);
    if (alpha == 0.0) {
      EXPECT_EQ(rep.bytes_serialized, 33u + 3 + 9 + 8 + n / 8 + n / 8);
      EXPECT_NEAR(rep.bits_per_parameter, 2.0, 1e-3);
    }
    if (alpha == 0.5) {
      EXPECT_NEAR(rep.bits_per_parameter, 1.5, 1e-3);
    }
  }
}
