#include "tdxsim/memory_engine.hpp"

#include <gtest/gtest.h>

namespace tdxsim {
namespace {

constexpr std::uint64_t kSeed = 0x5eed;

Line pattern(std::uint8_t base) {
  Line l{};
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(base + i);
  return l;
}

class MemoryEngineTest : public ::testing::Test {
 protected:
  explicit MemoryEngineTest(bool ci = false) : engine(kSeed) {
    EXPECT_EQ(engine.configure_tme({6, 4, ci}), Status::Success);
  }
  MemoryEngine engine;
};

class CiMemoryEngineTest : public MemoryEngineTest {
 protected:
  CiMemoryEngineTest() : MemoryEngineTest(true) {}
};

TEST(HkidPartition, WorkedExampleSixFour) {
  auto p = partition_hkids({6, 4, false});
  ASSERT_TRUE(p);
  EXPECT_EQ(p->shared_first, 0u);
  EXPECT_EQ(p->shared_last, 3u);
  EXPECT_EQ(p->private_first, 4u);
  EXPECT_EQ(p->private_last, 63u);
}

TEST(HkidPartition, MinimalPartition) {
  auto p = partition_hkids({1, 1, false});
  ASSERT_TRUE(p);
  EXPECT_EQ(p->shared_last, 0u);
  EXPECT_EQ(p->private_first, 1u);
  EXPECT_EQ(p->private_last, 1u);
}

TEST(HkidPartition, RejectsInvalidBits) {
  EXPECT_EQ(partition_hkids({6, 7, false}).status(), Status::InvalidBits);
  EXPECT_EQ(partition_hkids({0, 0, false}).status(), Status::InvalidBits);
  EXPECT_EQ(partition_hkids({16, 4, false}).status(), Status::InvalidBits);
  EXPECT_EQ(partition_hkids({6, 0, false}).status(), Status::InvalidBits);
}

TEST(HkidPartition, EveryHkidClassifiedExactlyOnce) {
  for (unsigned total = 1; total <= kMaxKeyidBits; ++total) {
    for (unsigned reserved = 1; reserved <= total; ++reserved) {
      auto p = partition_hkids({total, reserved, false});
      ASSERT_TRUE(p);
      EXPECT_EQ(p->private_first, 1u << (total - reserved));
      for (std::uint32_t h = 0; h < (1u << total); h += (total > 10 ? 37 : 1))
        EXPECT_NE(p->is_private(h), p->is_shared(h)) << total << "/" << reserved << " hkid " << h;
      EXPECT_FALSE(p->contains(1u << total));
    }
  }
}

TEST(MemoryEngine, ConfigureOnlyOnce) {
  MemoryEngine e(1);
  EXPECT_EQ(e.configure_tme({6, 7, false}), Status::InvalidBits);
  EXPECT_EQ(e.configure_tme({6, 4, false}), Status::Success);
  EXPECT_EQ(e.configure_tme({6, 4, false}), Status::AlreadyConfigured);
}

TEST(MemoryEngine, TrafficBeforeConfigureFails) {
  MemoryEngine e(1);
  EXPECT_EQ(e.write_line(Actor::Seam, {0}, Line{}), Status::NotConfigured);
  EXPECT_EQ(e.pconfig(Actor::Seam, 4).status(), Status::NotConfigured);
}

TEST_F(MemoryEngineTest, PconfigAccessControl) {
  EXPECT_EQ(engine.pconfig(Actor::Host, 4).status(), Status::PrivateHkidFromNonSeam);
  EXPECT_EQ(engine.pconfig(Actor::Seam, 64).status(), Status::HkidOutOfRange);
  EXPECT_TRUE(engine.pconfig(Actor::Seam, 4));
  EXPECT_EQ(engine.pconfig(Actor::Seam, 4).status(), Status::AlreadyBound);
  EXPECT_TRUE(engine.pconfig(Actor::Host, 1));
}

TEST_F(MemoryEngineTest, PconfigKeysFollowSeededTranscript) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 4));
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  // Li mode: no MAC key drawn, so the first two 32-byte draws are the keys.
  crypto::Rng replay(kSeed);
  const auto k4 = replay.bytes<32>();
  const auto k5 = replay.bytes<32>();
  EXPECT_NE(k4, k5);

  const std::uint64_t pa = 0x10000;
  const Line pt = pattern(9);
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(4, pa), pt), Status::Success);
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, pa + 64), pt), Status::Success);
  const auto raw4 = engine.raw_line(pa);
  const auto raw5 = engine.raw_line(pa + 64);
  EXPECT_EQ(raw4.ciphertext, crypto::aes128_xts_encrypt(k4, line_tweak(pa), pt));
  EXPECT_EQ(raw5.ciphertext, crypto::aes128_xts_encrypt(k5, line_tweak(pa + 64), pt));
  EXPECT_NE(raw4.ciphertext, pt);
}

TEST_F(MemoryEngineTest, OwnerBitTracksLastWriter) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  const std::uint64_t pa = 0x2000;
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, pa), pattern(1)), Status::Success);
  EXPECT_TRUE(engine.raw_line(pa).meta.td_owner);
  ASSERT_EQ(engine.write_line(Actor::Host, engine.addr(0, pa), pattern(2)), Status::Success);
  EXPECT_FALSE(engine.raw_line(pa).meta.td_owner);
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, pa), pattern(3)), Status::Success);
  EXPECT_TRUE(engine.raw_line(pa).meta.td_owner);
}

TEST_F(MemoryEngineTest, RoundTripUnderPrivateKey) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  const auto a = engine.addr(5, 0x3040);
  ASSERT_EQ(engine.write_line(Actor::Seam, a, pattern(7)), Status::Success);
  auto r = engine.read_line(Actor::Seam, a);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->kind, ReadOutcome::Kind::Plain);
  EXPECT_EQ(r->data, pattern(7));
}

TEST_F(MemoryEngineTest, HostReadOfOwnedLineIsAllZeros) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, 0x4000), pattern(0x55)), Status::Success);
  auto r = engine.read_line(Actor::Host, engine.addr(0, 0x4000));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->kind, ReadOutcome::Kind::AllZeros);
  EXPECT_EQ(r->data, Line{});
}

TEST_F(MemoryEngineTest, HostOverwriteThenSeamPrivateReadPoisons) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  const std::uint64_t pa = 0x5000;
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, pa), pattern(1)), Status::Success);
  ASSERT_EQ(engine.write_line(Actor::Host, engine.addr(0, pa), pattern(2)), Status::Success);
  auto r = engine.read_line(Actor::Seam, engine.addr(5, pa));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->kind, ReadOutcome::Kind::Poisoned);
  EXPECT_TRUE(engine.raw_line(pa).meta.poisoned);
  // Sticky: a fresh private write does not clear the mark.
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, pa), pattern(3)), Status::Success);
  EXPECT_EQ(engine.read_line(Actor::Seam, engine.addr(5, pa))->kind, ReadOutcome::Kind::Poisoned);
  engine.wipe_page(pa);
  EXPECT_FALSE(engine.raw_line(pa).present);
  auto host = engine.read_line(Actor::Host, engine.addr(0, pa));
  EXPECT_EQ(host->kind, ReadOutcome::Kind::Plain);
  EXPECT_EQ(host->data, Line{});
}

TEST_F(MemoryEngineTest, NeverWrittenLineReadPrivatelyIsPoisoned) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  EXPECT_EQ(engine.read_line(Actor::Seam, engine.addr(5, 0x9000))->kind, ReadOutcome::Kind::Poisoned);
  auto shared = engine.read_line(Actor::Host, engine.addr(0, 0xa000));
  EXPECT_EQ(shared->kind, ReadOutcome::Kind::Plain);
  EXPECT_EQ(shared->data, Line{});
}

TEST_F(MemoryEngineTest, HostCannotPresentPrivateHkid) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  EXPECT_EQ(engine.write_line(Actor::Host, engine.addr(5, 0x1000), Line{}), Status::PrivateHkidFromNonSeam);
  EXPECT_EQ(engine.read_line(Actor::Host, engine.addr(5, 0x1000)).status(), Status::PrivateHkidFromNonSeam);
}

TEST_F(MemoryEngineTest, UnalignedAndUnboundAccesses) {
  EXPECT_EQ(engine.write_line(Actor::Seam, engine.addr(0, 0x1008), Line{}), Status::Unaligned);
  EXPECT_EQ(engine.read_line(Actor::Seam, engine.addr(0, 0x1001)).status(), Status::Unaligned);
  EXPECT_EQ(engine.write_line(Actor::Seam, engine.addr(6, 0x1000), Line{}), Status::HkidNotBound);
  EXPECT_EQ(engine.write_line(Actor::Host, engine.addr(2, 0x1000), Line{}), Status::HkidNotBound);
}

TEST_F(MemoryEngineTest, SharedHkidZeroIsPassthroughUntilProgrammed) {
  const auto a = engine.addr(0, 0x7000);
  ASSERT_EQ(engine.write_line(Actor::Host, a, pattern(4)), Status::Success);
  EXPECT_EQ(engine.raw_line(0x7000).ciphertext, pattern(4));
  EXPECT_EQ(engine.read_line(Actor::Host, a)->data, pattern(4));
}

TEST_F(MemoryEngineTest, UnbindReleasesHkid) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  EXPECT_EQ(engine.unbind(Actor::Host, 5), Status::PrivateHkidFromNonSeam);
  EXPECT_EQ(engine.unbind(Actor::Seam, 5), Status::Success);
  EXPECT_EQ(engine.unbind(Actor::Seam, 5), Status::HkidNotBound);
  EXPECT_TRUE(engine.pconfig(Actor::Seam, 5));
}

TEST_F(MemoryEngineTest, Mac28RequiresCi) {
  EXPECT_EQ(engine.mac28(Line{}, line_tweak(0), false).status(), Status::CiDisabled);
}

TEST(Mac28, KnownAnswerFromReferenceHmac) {
  // Python hmac/hashlib: HMAC-SHA256(10..1f, aa*64 || LE64(0x12340) || 0^8 || owner)
  std::array<std::uint8_t, 16> key{};
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = static_cast<std::uint8_t>(0x10 + i);
  Line ct{};
  ct.fill(0xaa);
  const auto tweak = line_tweak(0x12340);
  EXPECT_EQ(compute_mac28(ct, tweak, false, key), 0x244659au);
  EXPECT_EQ(compute_mac28(ct, tweak, true, key), 0x93f8dedu);
}

TEST_F(CiMemoryEngineTest, MacIsDeterministicAndOwnerSensitive) {
  Line ct = pattern(3);
  const auto t = line_tweak(0x8000);
  auto m0 = engine.mac28(ct, t, false);
  auto m0b = engine.mac28(ct, t, false);
  auto m1 = engine.mac28(ct, t, true);
  ASSERT_TRUE(m0 && m0b && m1);
  EXPECT_EQ(*m0, *m0b);
  EXPECT_NE(*m0, *m1);
  EXPECT_LT(*m0, 1u << 28);
  // Oracle: the MAC key is the first 16 bytes of the engine's RNG transcript.
  crypto::Rng replay(kSeed);
  const auto mac_key = replay.bytes<16>();
  EXPECT_EQ(*m1, compute_mac28(ct, t, true, mac_key));
}

TEST_F(CiMemoryEngineTest, CiphertextBitFlipPoisons) {
  ASSERT_TRUE(engine.pconfig(Actor::Seam, 5));
  const std::uint64_t pa = 0x6000;
  ASSERT_EQ(engine.write_line(Actor::Seam, engine.addr(5, pa), pattern(8)), Status::Success);
  const auto before = engine.raw_line(pa);
  engine.flip_ciphertext_bit(pa, 77);
  const auto after = engine.raw_line(pa);
  // Oracle: recompute the MAC over the tampered ciphertext with the replayed key.
  crypto::Rng replay(kSeed);
  const auto mac_key = replay.bytes<16>();
  EXPECT_NE(compute_mac28(after.ciphertext, line_tweak(pa), true, mac_key), before.meta.mac);
  EXPECT_EQ(engine.read_line(Actor::Seam, engine.addr(5, pa))->kind, ReadOutcome::Kind::Poisoned);
}

TEST_F(CiMemoryEngineTest, HostReadsOfSharedLinesStillVerifyMac) {
  const auto a = engine.addr(0, 0xb000);
  ASSERT_EQ(engine.write_line(Actor::Host, a, pattern(1)), Status::Success);
  EXPECT_EQ(engine.read_line(Actor::Host, a)->kind, ReadOutcome::Kind::Plain);
  engine.flip_mac_bit(0xb000, 3);
  EXPECT_EQ(engine.read_line(Actor::Host, a)->kind, ReadOutcome::Kind::Poisoned);
}

}  // namespace
}  // namespace tdxsim
